import json
import subprocess
import sys
from pathlib import Path

import pytest

from geoloop.cli import main
from geoloop.experiments import ConfigError, load_config, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = {
    "det_convergence": {"levels": [2, 4], "T": 0.02, "dt": 0.01},
    "stoch_convergence": {"levels": [2, 4], "J": 3, "seed": 5, "T": 0.02, "dt": 0.01,
                          "sampler": {"kind": "affine_uniform", "sigma": 0.1}},
    "temporal_convergence": {"n": 2, "T": 0.04, "dts": [0.02, 0.01, 0.005]},
    "penalty_study": {"n": 2, "T": 0.02, "dt": 0.01, "gammas": [0, 1, 1000]},
    "single_run": {"problem": "heated_reservoir", "n": 2, "T": 0.02, "dt": 0.01, "seed": 3,
                   "sampler": {"kind": "kl_field"}},
}


def _write(tmp_path, name, body):
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps({"schema_version": 1, "experiment": name, **body}))
    return p


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path, capsys):
    assert main(["validate", str(path)]) == 0
    echoed = json.loads(capsys.readouterr().out)
    # the echo parses back to the same resolved config
    assert parse_config(echoed).as_dict() == echoed
    assert load_config(path).as_dict() == echoed


@pytest.mark.parametrize(
    "body,needle",
    [
        ({"k": 2.21, "levels": [4, 8], "T": 0.5, "dt": 0.003}, "integer multiple"),
        ({"levels": [4, 8], "J": 0}, "J must be >= 1"),
        ({"levels": [8, 4]}, "strictly refining"),
        ({"levels": [4, 8], "params": {"Pr": -1.0, "Rayleigh": 3}}, "Rayleigh"),
        ({"levels": [4, 8], "colour": "red"}, "unknown key 'colour'"),
    ],
)
def test_validate_rejects(tmp_path, capsys, body, needle):
    p = _write(tmp_path, "stoch_convergence" if "J" in body else "det_convergence", body)
    assert main(["validate", str(p)]) == 1
    assert needle in capsys.readouterr().err


def test_every_problem_is_listed(tmp_path):
    raw = {"schema_version": 2, "experiment": "penalty_study", "gammas": [1], "dt": -1.0, "seed": -4}
    with pytest.raises(ConfigError) as info:
        parse_config(raw)
    text = " | ".join(info.value.problems)
    for needle in ("schema_version", "2 gamma", "positive number", "seed"):
        assert needle in text


def test_unreadable_and_malformed_files(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["validate", str(bad)]) == 1


def test_overrides_and_full_profile(capsys):
    cfg = load_config(CONFIGS / "stoch_convergence.json", overrides={"seed": 99}, full_profile=True)
    assert (cfg.seed, cfg.T, cfg.dt) == (99, 0.5, 0.001)
    assert main(["validate", str(CONFIGS / "det_convergence.json"), "--seed", "4", "--full-profile"]) == 0
    echoed = json.loads(capsys.readouterr().out)
    assert echoed["seed"] == 4 and echoed["dt"] == 0.001


@pytest.mark.parametrize("name", sorted(SMALL))
def test_runs_are_byte_identical(tmp_path, capsys, name):
    cfg = _write(tmp_path, name, SMALL[name])
    outs = []
    for tag, jobs in (("a", "1"), ("b", "2" if name == "stoch_convergence" else "1")):
        out = tmp_path / tag
        assert main(["run", str(cfg), "--out", str(out), "--jobs", jobs]) == 0
        outs.append(out)
    assert "experiment " + name in capsys.readouterr().out
    csvs = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
    assert csvs
    for rel in csvs:
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel
    meta = json.loads((outs[0] / "metadata.json").read_text())
    assert meta["experiment"] == name and len(meta["config_hash"]) == 16
    assert "Philox" in meta["generator"]


def test_rate_columns_are_self_consistent(tmp_path):
    import csv

    from geoloop.verify import spatial_rates

    cfg = _write(tmp_path, "det_convergence", {"levels": [2, 4, 8], "T": 0.02, "dt": 0.01})
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 0
    for kind in ("L2", "H1"):
        rows = list(csv.reader(open(tmp_path / "o" / f"convergence_{kind}.csv")))
        hs = [float(r[0]) for r in rows[1:]]
        for col in (1, 3, 5, 7):
            errs = [float(r[col]) for r in rows[1:]]
            got = [float(r[col + 1]) for r in rows[2:]]
            assert got == spatial_rates(hs, errs)


def test_single_run_rejects_sampler_with_fixed_problem(tmp_path, capsys):
    cfg = _write(tmp_path, "single_run", {"n": 2, "T": 0.02, "dt": 0.01, "sampler": {"kind": "kl_field"}})
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "fixes k" in capsys.readouterr().err


def test_bad_jobs(tmp_path, capsys):
    cfg = _write(tmp_path, "det_convergence", SMALL["det_convergence"])
    assert main(["run", str(cfg), "--jobs", "0"]) == 1


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "geoloop", "validate", str(CONFIGS / "penalty_study.json")],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert json.loads(r.stdout)["experiment"] == "penalty_study"
