"""Plain Monte Carlo over conductivity samples.

One sample is one unit of work.  Results are gathered by sample index before
any aggregation, so the estimators never depend on completion order.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np

from .assembly import ProblemData, Spaces
from .randfield import GENERATOR, ConductivitySample, derive_stream, draw_sample
from .stepper import FIELDS, CoupledState, RunConfig, run_sample
from .verify import ManufacturedProblem, error_norms, field_l2

log = logging.getLogger(__name__)

ProblemSpec = Union[ProblemData, ManufacturedProblem, Callable[[ConductivitySample], ManufacturedProblem]]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(o):
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class McPlan:
    J: int
    base_seed: int
    sampler: str
    sampler_params: dict = field(default_factory=dict)
    config: RunConfig = field(default_factory=RunConfig)

    def validate(self) -> list[str]:
        errs = [] if int(self.J) == self.J and self.J >= 1 else [f"J must be a positive integer, got {self.J}"]
        return errs + self.config.validate()

    def as_dict(self) -> dict:
        return {"J": self.J, "base_seed": self.base_seed, "sampler": self.sampler,
                "sampler_params": dict(self.sampler_params), "config": dataclasses.asdict(self.config)}

    def sample(self, j: int) -> ConductivitySample:
        return draw_sample(self.sampler, self.sampler_params, derive_stream(self.base_seed, j), j)


@dataclass
class McResult:
    """Per-sample records (sorted by ``j``) and the estimators built from them.

    ``errors_rms[field][norm]`` is the root-mean-square error over samples;
    ``norms_rms[field]`` the same for the solution L2 norms.
    """

    records: list
    errors_rms: dict
    norms_rms: dict
    mean_state: dict | None
    metadata: dict

    @classmethod
    def from_records(cls, records, metadata, mean_state=None) -> "McResult":
        records = sorted(records, key=lambda r: r["j"])
        errors = {}
        if records and records[0].get("errors"):
            for name, rec in records[0]["errors"].items():
                errors[name] = {k: estimate_rms([r["errors"][name][k] ** 2 for r in records]) for k in rec}
        norms = {name: estimate_rms([r["norms"][name] ** 2 for r in records]) for name in FIELDS}
        return cls(records, errors, norms, mean_state, metadata)


def estimate_rms(squared_values) -> float:
    """``sqrt(mean(values))`` for per-sample squared norms."""
    v = np.asarray(list(squared_values), dtype=float)
    if v.size == 0:
        raise ValueError("no samples to aggregate")
    if np.any(v < 0):
        raise ValueError("squared norms must be >= 0")
    return float(np.sqrt(np.mean(v)))


def estimate_mean_field(vectors) -> np.ndarray:
    """Componentwise sample mean of coefficient vectors on one dof map."""
    vs = [np.asarray(v, dtype=float) for v in vectors]
    if not vs:
        raise ValueError("no samples to aggregate")
    if len({v.shape for v in vs}) != 1:
        raise ValueError(f"coefficient vectors differ in length: {sorted({v.shape for v in vs})}")
    return np.mean(np.stack(vs), axis=0)


# ---------------------------------------------------------------------------
# one sample
# ---------------------------------------------------------------------------
_SPACES_CACHE: dict = {}


def _spaces_for(config: RunConfig) -> Spaces:
    key = (config.n, config.darcy_family)
    if key not in _SPACES_CACHE:
        _SPACES_CACHE.clear()
        _SPACES_CACHE[key] = config.build_spaces()
    return _SPACES_CACHE[key]


def _resolve(problem: ProblemSpec, sample: ConductivitySample):
    if isinstance(problem, ProblemData):
        return None, problem
    mp = problem if isinstance(problem, ManufacturedProblem) else problem(sample)
    return mp, mp.problem_data()


def run_one(plan: McPlan, problem: ProblemSpec, j: int):
    """Solve sample ``j``; returns ``(record, final_state)``."""
    sample = plan.sample(j)
    spaces = _spaces_for(plan.config)
    mp, data = _resolve(problem, sample)
    state, _ = run_sample(plan.config, sample, data, spaces, record=False)
    record = {
        "j": int(j),
        "sample": sample.metadata(),
        "norms": {name: field_l2(spaces, name, getattr(state, name)) for name in FIELDS},
        "errors": error_norms(state, spaces, mp) if mp is not None else None,
    }
    return record, state


def _worker(args):
    plan, problem, j = args
    try:
        return run_one(plan, problem, j)
    except Exception as exc:  # re-raised in the parent with the sample index
        raise RuntimeError(f"sample {j} failed: {exc}") from exc


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------
def _record_paths(out_dir: Path, j: int):
    return out_dir / f"sample_{j:05d}.json", out_dir / f"sample_{j:05d}.npz"


def _save(out_dir: Path, chash: str, record, state: CoupledState):
    js, npz = _record_paths(out_dir, record["j"])
    np.savez(npz, t=state.t, **state.fields())
    tmp = js.with_suffix(".json.tmp")
    tmp.write_text(json.dumps({"config_hash": chash, "record": record}, sort_keys=True, default=_jsonable))
    os.replace(tmp, js)


def _load(out_dir: Path, chash: str, j: int):
    js, npz = _record_paths(out_dir, j)
    if not (js.exists() and npz.exists()):
        return None
    blob = json.loads(js.read_text())
    if blob.get("config_hash") != chash:
        return None
    with np.load(npz) as z:
        state = CoupledState(float(z["t"]), *(z[name] for name in FIELDS))
    return blob["record"], state


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------
def run_mc(plan: McPlan, problem: ProblemSpec, jobs: int = 1, out_dir=None, order=None,
           keep_mean: bool = True) -> McResult:
    """Run all samples of ``plan`` and aggregate.

    Parameters
    ----------
    problem : ProblemData, ManufacturedProblem, or callable
        A callable receives each :class:`ConductivitySample` and returns the
        manufactured problem whose exact fields the sample is checked against.
    jobs : int
        Worker processes; ``1`` runs in-process.
    out_dir : path, optional
        Per-sample records are written here as they finish and reused on restart.
    order : sequence of int, optional
        Execution order of sample indices (results do not depend on it).
    """
    errs = plan.validate()
    if errs:
        raise ValueError("; ".join(errs))
    chash = config_hash(plan.as_dict())
    order = list(range(plan.J)) if order is None else [int(j) for j in order]
    if sorted(order) != list(range(plan.J)):
        raise ValueError("order must be a permutation of range(J)")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    done = {}
    todo = []
    for j in order:
        hit = _load(out, chash, j) if out is not None else None
        if hit is not None:
            done[j] = hit
        else:
            todo.append(j)
    if done:
        log.info("resuming: %d of %d samples already on disk", len(done), plan.J)

    def finish(j, rec, state):
        done[j] = (rec, state)
        if out is not None:
            _save(out, chash, rec, state)

    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for j, (rec, state) in zip(todo, pool.map(_worker, [(plan, problem, j) for j in todo])):
                finish(j, rec, state)
    else:
        for j in todo:
            try:
                rec, state = run_one(plan, problem, j)
            except Exception as exc:
                raise RuntimeError(f"sample {j} failed: {exc}") from exc
            finish(j, rec, state)

    records = [done[j][0] for j in range(plan.J)]
    mean_state = None
    if keep_mean:
        mean_state = {name: estimate_mean_field([getattr(done[j][1], name) for j in range(plan.J)]) for name in FIELDS}
    meta = {
        "J": plan.J,
        "base_seed": plan.base_seed,
        "sampler": plan.sampler,
        "generator": GENERATOR,
        "config_hash": chash,
    }
    return McResult.from_records(records, meta, mean_state)
