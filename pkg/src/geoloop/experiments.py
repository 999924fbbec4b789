"""Experiment configs and drivers behind the command line.

A config is a JSON object with ``schema_version`` 1.  Keys not listed in
:data:`SCHEMA` are rejected so that a mistyped parameter cannot silently fall
back to its default.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .assembly import ZERO_PROBLEM, PhysicalParams, ProblemData
from .mcm import McPlan, canonical_json, config_hash, run_mc
from .randfield import GENERATOR, KINDS, derive_stream, draw_sample, sample_constant
from .stepper import RunConfig, run_sample, write_diagnostics_csv
from .verify import (
    ConvergenceReport,
    RandomConductivityFamily,
    error_norms,
    fixed_conductivity_problem,
    solve_manufactured,
    spatial_study,
    temporal_study,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EXPERIMENTS = ("det_convergence", "stoch_convergence", "temporal_convergence", "penalty_study", "single_run")
DESK_PROFILE = {"T": 0.1, "dt": 0.005}
FULL_PROFILE = {"T": 0.5, "dt": 0.001}

SCHEMA = {
    "schema_version": int,
    "experiment": str,
    "params": dict,
    "T": float,
    "dt": float,
    "dts": list,
    "levels": list,
    "n": int,
    "darcy_family": str,
    "k": float,
    "a": float,
    "sigma": float,
    "J": int,
    "seed": int,
    "gammas": list,
    "sampler": dict,
    "problem": str,
    "out": str,
}
PARAM_KEYS = {f.name for f in dataclasses.fields(PhysicalParams)}
PROBLEMS = ("fixed_conductivity", "heated_reservoir", "zero")
REQUIRED = {
    "det_convergence": ("levels",),
    "stoch_convergence": ("levels", "J"),
    "temporal_convergence": ("dts",),
    "penalty_study": ("gammas",),
    "single_run": (),
}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid config:\n" + "\n".join(f"  - {p}" for p in problems))
        self.problems = problems


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    params: PhysicalParams = field(default_factory=PhysicalParams)
    T: float = DESK_PROFILE["T"]
    dt: float = DESK_PROFILE["dt"]
    dts: tuple = ()
    levels: tuple = ()
    n: int = 8
    darcy_family: str = "BDM1"
    k: float = 2.21
    a: float = 1.0
    sigma: float = 0.1
    J: int = 1
    seed: int = 0
    gammas: tuple = ()
    sampler: dict | None = None
    problem: str = "fixed_conductivity"
    out: str = "results"

    def run_config(self, n: int | None = None, dt: float | None = None, gamma: float | None = None) -> RunConfig:
        params = self.params if gamma is None else dataclasses.replace(self.params, gamma=float(gamma))
        return RunConfig(params, self.dt if dt is None else float(dt), self.T, self.n if n is None else int(n),
                         self.darcy_family)

    def as_dict(self) -> dict:
        d = {k: v for k, v in dataclasses.asdict(self).items() if v is not None}
        d.pop("out")
        for key in ("dts", "levels", "gammas"):
            d[key] = list(d[key])
        d["schema_version"] = SCHEMA_VERSION
        return d

    @property
    def hash(self) -> str:
        return config_hash(self.as_dict())


def _check_type(key, value, want, problems):
    if want is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    elif want is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, want)
    if not ok:
        problems.append(f"{key}: expected {want.__name__}, got {type(value).__name__} {value!r}")
    return ok


def parse_config(raw: dict, overrides: dict | None = None, full_profile: bool = False) -> ExperimentConfig:
    """Validate a config mapping; raises :class:`ConfigError` listing every problem found."""
    problems = []
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a JSON object"])
    raw = dict(raw)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for key in raw:
        if key not in SCHEMA:
            problems.append(f"unknown key {key!r}")
    typed = {}
    for key, want in SCHEMA.items():
        if key in raw and _check_type(key, raw[key], want, problems):
            typed[key] = raw[key]
    if raw.get("schema_version") != SCHEMA_VERSION:
        problems.append(f"schema_version must be {SCHEMA_VERSION}, got {raw.get('schema_version')!r}")
    exp = typed.get("experiment")
    if exp not in EXPERIMENTS:
        problems.append(f"experiment must be one of {EXPERIMENTS}, got {raw.get('experiment')!r}")
    params = PhysicalParams()
    if "params" in typed:
        bad = sorted(set(typed["params"]) - PARAM_KEYS)
        problems += [f"params: unknown key {k!r}" for k in bad]
        good = {}
        for k, v in typed["params"].items():
            if k in PARAM_KEYS and _check_type(f"params.{k}", v, float, problems):
                good[k] = float(v)
        params = PhysicalParams(**good)
    problems += [f"params: {e}" for e in params.validate()]

    kw = {"params": params}
    if full_profile:
        typed.update(FULL_PROFILE)
    for key in ("T", "dt", "k", "a", "sigma"):
        if key in typed:
            kw[key] = float(typed[key])
    for key in ("n", "J", "seed", "darcy_family", "problem", "out", "sampler"):
        if key in typed:
            kw[key] = typed[key]
    for key in ("dts", "levels", "gammas"):
        if key in typed:
            kw[key] = tuple(typed[key])

    if exp in REQUIRED:
        for key in REQUIRED[exp]:
            if key not in typed:
                problems.append(f"{exp} requires {key!r}")
    levels = kw.get("levels", ())
    if levels:
        if not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in levels):
            problems.append("levels: expected positive integers (cells per unit length, h = 1/n)")
        elif any(b <= a for a, b in zip(levels, levels[1:])):
            problems.append("levels must be strictly refining (increasing n)")
        elif exp in ("det_convergence", "stoch_convergence") and len(levels) < 2:
            problems.append("levels: at least two mesh levels are needed for rates")
    if exp == "penalty_study" and len(kw.get("gammas", ())) < 2:
        problems.append("penalty_study requires at least 2 gamma values")
    for g in kw.get("gammas", ()):
        if not isinstance(g, (int, float)) or isinstance(g, bool) or not g >= 0:
            problems.append(f"gammas: {g!r} is not a nonnegative number")
    dts = kw.get("dts", ())
    if exp == "temporal_convergence" and len(dts) < 3:
        problems.append("temporal_convergence requires at least 3 time steps")
    if "J" in kw and kw["J"] < 1:
        problems.append(f"J must be >= 1, got {kw['J']}")
    if "n" in kw and kw["n"] < 1:
        problems.append(f"n must be >= 1, got {kw['n']}")
    if kw.get("darcy_family", "BDM1") not in ("BDM1", "RT0"):
        problems.append(f"darcy_family must be BDM1 or RT0, got {kw['darcy_family']!r}")
    if kw.get("problem", "fixed_conductivity") not in PROBLEMS:
        problems.append(f"problem must be one of {PROBLEMS}, got {kw['problem']!r}")
    if "k" in kw and not kw["k"] > 0:
        problems.append(f"k must be > 0, got {kw['k']}")
    if "sigma" in kw and kw["sigma"] < 0:
        problems.append(f"sigma must be >= 0, got {kw['sigma']}")
    if "seed" in kw and not 0 <= kw["seed"] < 2**64:
        problems.append(f"seed must be an unsigned 64-bit integer, got {kw['seed']}")
    sampler = kw.get("sampler")
    if sampler is not None and sampler.get("kind") not in KINDS:
        problems.append(f"sampler.kind must be one of {KINDS}, got {sampler.get('kind')!r}")

    # step counts, once T and dt are known to be numbers
    T = kw.get("T", DESK_PROFILE["T"])
    for dt in [kw.get("dt", DESK_PROFILE["dt"])] + [d for d in dts]:
        if not isinstance(dt, (int, float)) or isinstance(dt, bool) or not dt > 0:
            problems.append(f"time step {dt!r} must be a positive number")
            continue
        if T > 0:
            N = round(T / dt)
            if N < 1 or abs(N * dt - T) > 1e-9 * max(1.0, T):
                problems.append(f"T={T} is not an integer multiple of dt={dt}")
    if not T > 0:
        problems.append(f"T must be > 0, got {T}")
    if len(dts) > 1 and any(b >= a for a, b in zip(dts, dts[1:])):
        problems.append("dts must be strictly decreasing")

    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(experiment=exp, **kw)


def load_config(path, **kw) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: not valid JSON ({exc})"]) from exc
    return parse_config(raw, **kw)


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------
def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, str)):
        return str(v)
    return repr(float(v))


def write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_errors_long(path: Path, report: ConvergenceReport) -> None:
    """Every field and norm in long form: ``h_or_dt, field, norm, error``."""
    rows = []
    for h, errs in report.rows:
        for name in sorted(errs):
            for norm in sorted(errs[name]):
                rows.append([h, name, norm, errs[name][norm]])
    write_rows(path, ["h_or_dt", "field", "norm", "error"], rows)


def _metadata(cfg: ExperimentConfig, extra=None) -> dict:
    meta = {
        "experiment": cfg.experiment,
        "config_hash": cfg.hash,
        "config": cfg.as_dict(),
        "seed": cfg.seed,
        "J": cfg.J,
        "code_version": __version__,
        "generator": GENERATOR,
    }
    meta.update(extra or {})
    return meta


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(json.loads(canonical_json(obj)), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------
def _report_summary(report: ConvergenceReport) -> dict:
    out = {}
    for name in ("u_f", "theta_f", "u_p", "theta_p"):
        out[name] = {}
        for norm in ("L2", "H1"):
            out[name][norm] = {"errors": report.series(name, norm), "rates": report.rates(name, norm)}
    return out


def _write_report(out: Path, report: ConvergenceReport) -> None:
    report.write_csv(out / "convergence_L2.csv", out / "convergence_H1.csv")
    write_errors_long(out / "errors.csv", report)


def run_det_convergence(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> dict:
    problem = fixed_conductivity_problem(cfg.k, cfg.a, cfg.params)
    report = spatial_study(problem, cfg.run_config(), cfg.levels)
    _write_report(out, report)
    return _report_summary(report)


def run_stoch_convergence(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> dict:
    sampler = cfg.sampler or {"kind": "affine_uniform", "sigma": cfg.sigma}
    if sampler.get("kind") != "affine_uniform":
        raise ConfigError(["stoch_convergence verifies against the affine_uniform manufactured problem"])
    sigma = float(sampler.get("sigma", cfg.sigma))
    family = RandomConductivityFamily(sigma, cfg.a, cfg.params)
    report = ConvergenceReport("h")
    per_level = {}
    for n in cfg.levels:
        plan = McPlan(cfg.J, cfg.seed, "affine_uniform", {"sigma": sigma}, cfg.run_config(n=n))
        res = run_mc(plan, family, jobs=jobs, out_dir=out / "samples" / f"level_{n}", keep_mean=False)
        report.add(1.0 / n, res.errors_rms)
        per_level[n] = res.records
    _write_report(out, report)
    rows = []
    for n in cfg.levels:
        for r in per_level[n]:
            e = r["errors"]
            rows.append([1.0 / n, r["j"], *r["sample"]["lambda_draw"],
                         e["u_f"]["L2"], e["theta_f"]["L2"], e["u_p"]["L2"], e["theta_p"]["L2"]])
    write_rows(out / "samples.csv",
               ["h", "j", "lambda_1", "lambda_2", "err_uf_L2", "err_thf_L2", "err_up_L2", "err_thp_L2"], rows)
    return _report_summary(report)


def run_temporal_convergence(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> dict:
    problem = fixed_conductivity_problem(cfg.k, cfg.a, cfg.params)
    _, _, orders = temporal_study(problem, cfg.run_config(), cfg.dts)
    names = (("uf", "u_f"), ("thf", "theta_f"), ("up", "u_p"), ("thp", "theta_p"))
    header = ["h_or_dt"]
    for short, _ in names:
        header += [f"diff_{short}_L2", "beta", "order"]
    rows = []
    for i, dt in enumerate(cfg.dts):
        row = [dt]
        for _, name in names:
            o = orders[name]
            diff = o["diffs"][i - 1] if i >= 1 else None
            beta = o["beta"][i - 2] if i >= 2 else None
            order = o["order"][i - 2] if i >= 2 else None
            row += [diff, beta, order]
        rows.append(row)
    write_rows(out / "temporal.csv", header, rows)
    return {name: orders[name] for _, name in names}


def run_penalty_study(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> dict:
    problem = fixed_conductivity_problem(cfg.k, cfg.a, cfg.params)
    rows, summary = [], {}
    spaces = cfg.run_config().build_spaces()
    for g in cfg.gammas:
        _, _, e = solve_manufactured(problem, cfg.run_config(gamma=g), spaces)
        rows.append([g, e["u_f"]["L2"], e["theta_f"]["L2"], e["u_p"]["L2"], e["theta_p"]["L2"],
                     e["theta_f"]["H1"], e["theta_p"]["H1"]])
        summary[repr(float(g))] = {name: e[name]["L2"] for name in ("u_f", "theta_f", "u_p", "theta_p")}
    write_rows(out / "penalty.csv",
               ["gamma", "err_uf_L2", "err_thf_L2", "err_up_L2", "err_thp_L2", "err_thf_H1", "err_thp_H1"], rows)
    return summary


def _reservoir_temperature(x, y, t):
    return 1.0 - y


def heated_reservoir_problem() -> ProblemData:
    """No forcing, fluid at rest; the porous layer is held at ``1 - y`` on its outer walls and starts there."""
    return ProblemData(theta_p=_reservoir_temperature)


def run_single(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> dict:
    rc = cfg.run_config()
    spaces = rc.build_spaces()
    mp = None
    if cfg.problem == "fixed_conductivity":
        if cfg.sampler is not None:
            raise ConfigError(["problem 'fixed_conductivity' fixes k; drop 'sampler' or pick another problem"])
        mp = fixed_conductivity_problem(cfg.k, cfg.a, cfg.params)
        data, sample = mp.problem_data(), mp.conductivity()
    else:
        data = heated_reservoir_problem() if cfg.problem == "heated_reservoir" else ZERO_PROBLEM
        if cfg.sampler is None:
            sample = sample_constant(cfg.k)
        else:
            sample = draw_sample(cfg.sampler["kind"], {k: v for k, v in cfg.sampler.items() if k != "kind"},
                                 derive_stream(cfg.seed, 0), 0)
    state, rows = run_sample(rc, sample, data, spaces)
    write_diagnostics_csv(rows, out / "diagnostics.csv")
    summary = {"final_norms": rows[-1], "sample": sample.metadata()}
    if mp is not None:
        summary["errors"] = error_norms(state, spaces, mp)
    return summary


RUNNERS = {
    "det_convergence": run_det_convergence,
    "stoch_convergence": run_stoch_convergence,
    "temporal_convergence": run_temporal_convergence,
    "penalty_study": run_penalty_study,
    "single_run": run_single,
}


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> dict:
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    log.info("running %s (config %s) into %s", cfg.experiment, cfg.hash, out)
    summary = RUNNERS[cfg.experiment](cfg, out, jobs)
    _write_json(out / "metadata.json", _metadata(cfg))
    _write_json(out / "summary.json", summary)
    (out / "summary.txt").write_text(format_summary(cfg, summary))
    return summary


def format_summary(cfg: ExperimentConfig, summary: dict) -> str:
    lines = [f"experiment {cfg.experiment}  config {cfg.hash}  T={cfg.T} dt={cfg.dt}"]
    if cfg.experiment in ("det_convergence", "stoch_convergence"):
        for name, norms in summary.items():
            for norm, d in norms.items():
                errs = " ".join(f"{e:.6g}" for e in d["errors"])
                rates = " ".join(f"{r:.3f}" for r in d["rates"])
                lines.append(f"{name:8s} {norm:3s} errors [{errs}]  rates [{rates}]")
    elif cfg.experiment == "temporal_convergence":
        for name, d in summary.items():
            lines.append(f"{name:8s} beta {[round(b, 5) for b in d['beta']]}  order {[round(o, 3) for o in d['order']]}")
    elif cfg.experiment == "penalty_study":
        for g, d in summary.items():
            lines.append(f"gamma {g:>10s}  " + "  ".join(f"{k} {v:.6g}" for k, v in d.items()))
    else:
        lines.append(json.dumps(json.loads(canonical_json(summary)), sort_keys=True))
    return "\n".join(lines) + "\n"
