"""Realizations of the scalar hydraulic conductivity ``K = k I`` of the porous layer."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GENERATOR = "numpy.random.Generator(Philox) seeded by SeedSequence(base_seed, spawn_key=(j,))"
PROBE_N = 50
KL_FLOOR = 0.01
_MAX_REDRAWS = 1000

KINDS = ("constant", "affine_uniform", "kl_field")


def _probe_grid(box=((0.0, 1.0), (0.0, 1.0)), n=PROBE_N):
    x = np.linspace(box[0][0], box[0][1], n)
    y = np.linspace(box[1][0], box[1][1], n)
    return np.meshgrid(x, y, indexing="ij")


@dataclass(frozen=True)
class ConductivitySample:
    """One conductivity realization.

    ``kind`` selects the closed form evaluated by :meth:`k_eval`; the sample is
    a plain value so it pickles into worker processes.

    Attributes
    ----------
    kind : {"constant", "affine_uniform", "kl_field"}
    value : float
        The constant ``k`` for the two spatially constant kinds, ``a0`` for a KL field.
    lambda_draw : tuple of float
        Raw variates (``lambda_1, lambda_2`` or ``Y_0 .. Y_2nf``).
    coeffs : tuple of float
        KL amplitudes ``sigma sqrt(omega_i)`` for ``i = 0..n_f``.
    bounds : (k_min, k_max) realized on a 50x50 probe grid
    """

    kind: str
    value: float
    lambda_draw: tuple = ()
    coeffs: tuple = ()
    sample_index: int | None = None
    params: dict = field(default_factory=dict, compare=False)
    bounds: tuple = (np.nan, np.nan)

    def k_eval(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast_shapes(x.shape, y.shape)
        if self.kind in ("constant", "affine_uniform"):
            return np.full(shape, self.value)
        if self.kind == "kl_field":
            return np.broadcast_to(_kl_eval(self.value, self.coeffs, self.lambda_draw, y), shape).copy()
        raise ValueError(f"unknown conductivity kind {self.kind!r}")

    @property
    def is_constant(self) -> bool:
        return self.kind != "kl_field"

    def with_index(self, j: int) -> "ConductivitySample":
        return ConductivitySample(self.kind, self.value, self.lambda_draw, self.coeffs, j, self.params, self.bounds)

    def metadata(self) -> dict:
        return {
            "kind": self.kind,
            "sample_index": self.sample_index,
            "params": dict(self.params),
            "lambda_draw": [float(v) for v in self.lambda_draw],
            "k_min": float(self.bounds[0]),
            "k_max": float(self.bounds[1]),
        }


def _with_bounds(sample: ConductivitySample) -> ConductivitySample:
    X, Y = _probe_grid()
    k = sample.k_eval(X, Y)
    return ConductivitySample(sample.kind, sample.value, sample.lambda_draw, sample.coeffs,
                              sample.sample_index, sample.params, (float(k.min()), float(k.max())))


def sample_constant(k_value: float) -> ConductivitySample:
    k_value = float(k_value)
    if not k_value > 0:
        raise ValueError(f"conductivity must be positive, got {k_value}")
    return ConductivitySample("constant", k_value, params={"k": k_value}, bounds=(k_value, k_value))


def sample_affine_uniform(sigma: float, rng: np.random.Generator, base: float = 3.0) -> ConductivitySample:
    """``k = base + sigma (lambda_1 + lambda_2)`` with ``lambda_i ~ U[-1, 1]``."""
    sigma = float(sigma)
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    lam = rng.uniform(-1.0, 1.0, size=2)
    k = base + sigma * float(lam.sum())
    if not k > 0:
        raise ValueError(f"base={base}, sigma={sigma} admits a nonpositive conductivity")
    return ConductivitySample("affine_uniform", k, tuple(float(v) for v in lam),
                              params={"sigma": sigma, "base": base}, bounds=(k, k))


def kl_weights(n_f: int, L_c: float) -> np.ndarray:
    """Eigenvalues ``omega_0 .. omega_nf`` of the truncated expansion."""
    i = np.arange(1, n_f + 1)
    return np.concatenate([[np.sqrt(np.pi * L_c) / 2.0], np.sqrt(np.pi) * L_c * np.exp(-((i * np.pi * L_c) ** 2) / 4.0)])


def _kl_eval(a0, coeffs, Y, y):
    n_f = len(coeffs) - 1
    Y = np.asarray(Y)
    k = a0 + coeffs[0] * Y[0] + np.zeros_like(y)
    for i in range(1, n_f + 1):
        k = k + coeffs[i] * (Y[i] * np.cos(i * np.pi * y) + Y[n_f + i] * np.sin(i * np.pi * y))
    return k


def kl_from_variates(a0, sigma, n_f, L_c, Y) -> ConductivitySample:
    """Build the field for given variates ``Y_0 .. Y_2nf`` without a positivity check."""
    Y = np.asarray(Y, dtype=float)
    if Y.shape != (2 * n_f + 1,):
        raise ValueError(f"expected {2 * n_f + 1} variates, got shape {Y.shape}")
    coeffs = tuple(float(c) for c in sigma * np.sqrt(kl_weights(n_f, L_c)))
    return _with_bounds(ConductivitySample(
        "kl_field", float(a0), tuple(float(v) for v in Y), coeffs,
        params={"a0": float(a0), "sigma": float(sigma), "n_f": int(n_f), "L_c": float(L_c)},
    ))


def sample_kl_field(a0: float, sigma: float, n_f: int, L_c: float, rng: np.random.Generator,
                    floor: float = KL_FLOOR) -> ConductivitySample:
    """Truncated expansion in ``y`` with ``Y_i ~ U[-sqrt 3, sqrt 3]``; redraws until ``min k > floor``."""
    if not a0 > 0:
        raise ValueError(f"a0 must be > 0, got {a0}")
    if int(n_f) != n_f or n_f < 1:
        raise ValueError(f"n_f must be a positive integer, got {n_f}")
    if not L_c > 0:
        raise ValueError(f"L_c must be > 0, got {L_c}")
    s3 = np.sqrt(3.0)
    for _ in range(_MAX_REDRAWS):
        Y = rng.uniform(-s3, s3, size=2 * int(n_f) + 1)
        sample = kl_from_variates(a0, sigma, int(n_f), L_c, Y)
        if sample.bounds[0] > floor:
            return sample
    raise ValueError(f"no KL draw with min k > {floor} after {_MAX_REDRAWS} attempts")


def derive_stream(base_seed: int, j: int) -> np.random.Generator:
    """Independent, reproducible stream for sample ``j``."""
    if j < 0:
        raise ValueError(f"sample index must be >= 0, got {j}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(base_seed), spawn_key=(int(j),))))


def draw_sample(kind: str, params: dict, rng: np.random.Generator | None, j: int | None = None) -> ConductivitySample:
    """Dispatch by sampler name; ``params`` holds the sampler's keyword arguments."""
    if kind == "constant":
        s = sample_constant(params["k"])
    elif kind == "affine_uniform":
        s = sample_affine_uniform(params.get("sigma", 0.1), rng, base=params.get("base", 3.0))
    elif kind == "kl_field":
        s = sample_kl_field(params.get("a0", 1.0), params.get("sigma", 0.15), params.get("n_f", 3),
                            params.get("L_c", 0.25), rng)
    else:
        raise ValueError(f"unknown sampler {kind!r}; expected one of {KINDS}")
    return s.with_index(j) if j is not None else s
