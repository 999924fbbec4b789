"""Manufactured solutions, error norms and convergence estimators.

Both manufactured problems share the same fields except for the amplitude of
the free-flow velocity, which is a stream-function curl

    psi = 5 A cos(t) F(x) H(y),   F = x^2 (x-1)^2,   H = y^2 (y-1)^2,
    u_f = (psi_y, -psi_x),

and the Darcy conductivity ``k``.  Forcing is obtained by applying the strong
operators to the exact fields; all derivatives are hard-coded.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

from .assembly import PhysicalParams, ProblemData, Spaces
from .randfield import ConductivitySample, sample_constant
from .stepper import FIELDS, CoupledState, RunConfig, run_sample

ERROR_DEGREE = 8
PI = np.pi

_F = Polynomial([0.0, 0.0, 1.0, -2.0, 1.0])  # x^2 (x-1)^2
_FD = [_F.deriv(m) for m in range(4)]


@dataclass(frozen=True)
class ManufacturedProblem:
    """Closed-form exact fields and forcing.

    Parameters
    ----------
    amplitude : float
        ``A`` in the free-flow velocity.
    k : float
        Constant Darcy conductivity.
    a : float
        Temperature amplitude.
    """

    name: str
    amplitude: float
    k: float
    a: float = 1.0
    params: PhysicalParams = field(default_factory=PhysicalParams)
    lambda_draw: tuple = ()

    # -- free flow --------------------------------------------------------------
    def u_f(self, x, y, t):
        c = 5.0 * self.amplitude * np.cos(t)
        return np.stack([c * _FD[0](x) * _FD[1](y), -c * _FD[1](x) * _FD[0](y)])

    def u_f_t(self, x, y, t):
        c = -5.0 * self.amplitude * np.sin(t)
        return np.stack([c * _FD[0](x) * _FD[1](y), -c * _FD[1](x) * _FD[0](y)])

    def grad_u_f(self, x, y, t):
        """``G[i, j] = d u_i / d x_j``."""
        c = 5.0 * self.amplitude * np.cos(t)
        F, H = _FD, _FD
        return np.stack([
            np.stack([c * F[1](x) * H[1](y), c * F[0](x) * H[2](y)]),
            np.stack([-c * F[2](x) * H[0](y), -c * F[1](x) * H[1](y)]),
        ])

    def lap_u_f(self, x, y, t):
        c = 5.0 * self.amplitude * np.cos(t)
        F, H = _FD, _FD
        return np.stack([
            c * (F[2](x) * H[1](y) + F[0](x) * H[3](y)),
            -c * (F[3](x) * H[0](y) + F[1](x) * H[2](y)),
        ])

    def p_f(self, x, y, t):
        return 10.0 * (2 * x - 1) * (2 * y - 1) * np.cos(t)

    def grad_p_f(self, x, y, t):
        return np.stack([20.0 * (2 * y - 1), 20.0 * (2 * x - 1)]) * np.cos(t)

    def theta_f(self, x, y, t):
        return self.a * x * (1 - x) * (1 - y) * np.exp(-t)

    def grad_theta_f(self, x, y, t):
        e = self.a * np.exp(-t)
        return np.stack([e * (1 - 2 * x) * (1 - y), -e * x * (1 - x)])

    def lap_theta_f(self, x, y, t):
        return -2.0 * self.a * (1 - y) * np.exp(-t)

    # -- porous medium -----------------------------------------------------------
    def u_p(self, x, y, t):
        sx, cx, sy, cy = np.sin(PI * x), np.cos(PI * x), np.sin(PI * y), np.cos(PI * y)
        return np.stack([2 * PI * sx**2 * sy * cy, -2 * PI * sx * cx * sy**2]) * np.cos(t)

    def u_p_t(self, x, y, t):
        sx, cx, sy, cy = np.sin(PI * x), np.cos(PI * x), np.sin(PI * y), np.cos(PI * y)
        return np.stack([2 * PI * sx**2 * sy * cy, -2 * PI * sx * cx * sy**2]) * (-np.sin(t))

    def grad_u_p(self, x, y, t):
        sx, cx, sy, cy = np.sin(PI * x), np.cos(PI * x), np.sin(PI * y), np.cos(PI * y)
        p2 = PI**2
        return np.stack([
            np.stack([4 * p2 * sx * cx * sy * cy, 2 * p2 * sx**2 * (cy**2 - sy**2)]),
            np.stack([-2 * p2 * (cx**2 - sx**2) * sy**2, -4 * p2 * sx * cx * sy * cy]),
        ]) * np.cos(t)

    def phi_p(self, x, y, t):
        return np.cos(PI * x) * np.cos(PI * y) * np.cos(t)

    def grad_phi_p(self, x, y, t):
        return -PI * np.cos(t) * np.stack([np.sin(PI * x) * np.cos(PI * y), np.cos(PI * x) * np.sin(PI * y)])

    def theta_p(self, x, y, t):
        return self.a * x * (1 - x) * (y - y**2) * np.exp(-t)

    def grad_theta_p(self, x, y, t):
        e = self.a * np.exp(-t)
        return np.stack([e * (1 - 2 * x) * (y - y**2), e * x * (1 - x) * (1 - 2 * y)])

    def lap_theta_p(self, x, y, t):
        return -2.0 * self.a * ((y - y**2) + x * (1 - x)) * np.exp(-t)

    # -- forcing -------------------------------------------------------------------
    def f_f(self, x, y, t):
        p = self.params
        u = self.u_f(x, y, t)
        G = self.grad_u_f(x, y, t)
        conv = np.einsum("ij...,j...->i...", G, u)
        out = self.u_f_t(x, y, t) - p.Pr * self.lap_u_f(x, y, t) + conv + self.grad_p_f(x, y, t)
        out[1] = out[1] - p.Pr * p.Ra * self.theta_f(x, y, t)
        return out

    def upsilon_f(self, x, y, t):
        p = self.params
        adv = np.einsum("i...,i...->...", self.u_f(x, y, t), self.grad_theta_f(x, y, t))
        return -self.theta_f(x, y, t) - p.k_f * self.lap_theta_f(x, y, t) + adv

    def upsilon_p(self, x, y, t):
        p = self.params
        adv = np.einsum("i...,i...->...", self.u_p(x, y, t), self.grad_theta_p(x, y, t))
        return -self.theta_p(x, y, t) - p.k_p * self.lap_theta_p(x, y, t) + adv

    def darcy_load(self, x, y, t):
        """Residual of the Darcy momentum equation at the exact fields."""
        p, k = self.params, self.k
        L2 = p.L**2
        out = (p.Ca * k / L2) * self.u_p_t(x, y, t) + p.Pr * self.u_p(x, y, t) + (k / L2) * self.grad_phi_p(x, y, t)
        out[1] = out[1] - (p.Pr * p.Ra * k / L2) * self.theta_p(x, y, t)
        return out

    # -- glue ----------------------------------------------------------------------
    def problem_data(self) -> ProblemData:
        return ProblemData(
            u_f=self.u_f, theta_f=self.theta_f, u_p=self.u_p, theta_p=self.theta_p,
            f_f=self.f_f, upsilon_f=self.upsilon_f, upsilon_p=self.upsilon_p,
            darcy_load=self.darcy_load, p_f=self.p_f, phi_p=self.phi_p,
        )

    def conductivity(self) -> ConductivitySample:
        return sample_constant(self.k)

    def exact(self, name: str):
        return getattr(self, name)


def fixed_conductivity_problem(k_value: float, a: float = 1.0, params: PhysicalParams | None = None) -> ManufacturedProblem:
    """Deterministic ``K = k I``; the free-flow velocity is scaled by ``k`` as well."""
    if not k_value > 0:
        raise ValueError(f"k_value must be > 0, got {k_value}")
    return ManufacturedProblem("fixed_conductivity", float(k_value), float(k_value), a, params or PhysicalParams())


def random_conductivity_problem(lambda_draw, sigma: float = 0.1, a: float = 1.0,
                                params: PhysicalParams | None = None) -> ManufacturedProblem:
    """``K = (3 + sigma (l1 + l2)) I``; the free-flow velocity carries ``1 / (3 + l1 + l2)`` (no sigma)."""
    l1, l2 = (float(v) for v in lambda_draw)
    if not (-1.0 <= l1 <= 1.0 and -1.0 <= l2 <= 1.0):
        raise ValueError(f"lambda draw must lie in [-1, 1]^2, got {(l1, l2)}")
    return ManufacturedProblem("random_conductivity", 1.0 / (3.0 + l1 + l2), 3.0 + sigma * (l1 + l2), a,
                               params or PhysicalParams(), (l1, l2))


# ---------------------------------------------------------------------------
# errors
# ---------------------------------------------------------------------------
_SPACE_OF = {"u_f": "V_f", "p_f": "Q_f", "theta_f": "W_f", "u_p": "V_p", "phi_p": "Q_p", "theta_p": "W_p"}


def _field_values(spaces: Spaces, name: str, coeffs, degree: int):
    """Values, gradients (None for P0), divergence (H(div) only), weights and points at quadrature."""
    dm = getattr(spaces, _SPACE_OF[name])
    tab = dm.tabulate(degree)
    if name == "u_p":
        vals, divs = dm.evaluate(coeffs, tab)
        grads = dm.broken_gradient(coeffs, tab)
        return vals, grads, divs, tab
    if name == "phi_p":
        vals, _ = dm.evaluate(coeffs, tab)
        return vals, None, None, tab
    vals, grads = dm.evaluate(coeffs, tab)
    return vals, grads, None, tab


def field_l2(spaces: Spaces, name: str, coeffs, degree: int = ERROR_DEGREE) -> float:
    vals, _, _, tab = _field_values(spaces, name, coeffs, degree)
    sq = vals**2 if vals.ndim == 2 else np.sum(vals**2, axis=-1)
    return float(np.sqrt(np.sum(tab.weights * sq)))


def error_norms(state: CoupledState, spaces: Spaces, problem: ManufacturedProblem, t: float | None = None,
                degree: int = ERROR_DEGREE) -> dict[str, dict[str, float]]:
    """Errors against the exact fields at ``t`` (defaults to ``state.t``).

    Every field gets ``L2``; fields with gradients get ``H1_semi`` and the full
    ``H1 = sqrt(L2^2 + H1_semi^2)`` (cellwise gradient for the Darcy velocity).
    The Darcy velocity additionally gets ``Hdiv = sqrt(L2^2 + |div|^2)``.
    """
    if t is None:
        t = state.t
    elif abs(t - state.t) > 1e-12 * max(1.0, abs(t)):
        raise ValueError(f"t={t} does not match state time {state.t}")
    out = {}
    for name in FIELDS:
        vals, grads, divs, tab = _field_values(spaces, name, getattr(state, name), degree)
        x, y = tab.points[..., 0], tab.points[..., 1]
        w = tab.weights
        ex = getattr(problem, name)(x, y, t)
        if vals.ndim == 3:
            l2 = np.sum(w * np.sum((vals - np.moveaxis(ex, 0, -1)) ** 2, axis=-1))
        else:
            l2 = np.sum(w * (vals - ex) ** 2)
        rec = {"L2": float(np.sqrt(l2))}
        if grads is not None:
            gex = getattr(problem, "grad_" + name)(x, y, t)
            if gex.ndim == 4:  # vector field: (2, 2, nc, nq) -> (nc, nq, 2, 2)
                gex = np.moveaxis(gex, (0, 1), (-2, -1))
                semi = np.sum(w * np.sum((grads - gex) ** 2, axis=(-2, -1)))
            else:
                semi = np.sum(w * np.sum((grads - np.moveaxis(gex, 0, -1)) ** 2, axis=-1))
            rec["H1_semi"] = float(np.sqrt(semi))
            rec["H1"] = float(np.sqrt(l2 + semi))
        if divs is not None:
            # exact divergence is zero
            d2 = np.sum(w * divs[:, None] ** 2)
            rec["div"] = float(np.sqrt(d2))
            rec["Hdiv"] = float(np.sqrt(l2 + d2))
        out[name] = rec
    return out


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------
def spatial_rates(hs, errors) -> list[float]:
    """``log(e1/e2) / log(h1/h2)`` between consecutive rows."""
    hs = np.asarray(hs, dtype=float)
    e = np.asarray(errors, dtype=float)
    if len(hs) < 2 or len(hs) != len(e):
        raise ValueError("need at least two (h, error) rows of equal length")
    if np.any(np.diff(hs) >= 0):
        raise ValueError("h must be strictly decreasing")
    if np.any(e <= 0):
        raise ValueError("errors must be positive to form a rate")
    return [float(np.log(e[i] / e[i + 1]) / np.log(hs[i] / hs[i + 1])) for i in range(len(hs) - 1)]


def temporal_order(states, spaces: Spaces, fields=FIELDS, degree: int = ERROR_DEGREE):
    """Successive-difference ratios for states computed with ``dt, dt/2, dt/4, ...``.

    Returns ``{field: {"diffs": [...], "beta": [...], "order": [...]}}`` with
    ``beta_i = |v_i - v_{i+1}| / |v_{i+1} - v_{i+2}|`` in L2 and ``order = log2(beta)``.
    """
    if len(states) < 3:
        raise ValueError("need states for at least three time steps")
    T = states[0].t
    if any(abs(s.t - T) > 1e-12 * max(1.0, T) for s in states):
        raise ValueError("all states must be at the same final time")
    out = {}
    for name in fields:
        vs = [getattr(s, name) for s in states]
        if len({len(v) for v in vs}) != 1:
            raise ValueError(f"{name}: states live on different dof maps")
        diffs = [field_l2(spaces, name, vs[i] - vs[i + 1], degree) for i in range(len(vs) - 1)]
        if any(d == 0.0 for d in diffs[1:]):
            raise ValueError(f"{name}: zero successive difference, ratio undefined")
        beta = [diffs[i] / diffs[i + 1] for i in range(len(diffs) - 1)]
        out[name] = {"diffs": diffs, "beta": beta, "order": [math.log2(b) for b in beta]}
    return out


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------
REPORT_FIELDS = (("uf", "u_f"), ("thf", "theta_f"), ("up", "u_p"), ("thp", "theta_p"))


@dataclass
class ConvergenceReport:
    """Rows keyed by ``h`` (or ``dt``) holding :func:`error_norms` records."""

    key: str = "h"
    rows: list = field(default_factory=list)

    def add(self, h_or_dt: float, errors: dict):
        self.rows.append((float(h_or_dt), errors))

    @property
    def steps(self) -> list[float]:
        return [r[0] for r in self.rows]

    def series(self, name: str, norm: str) -> list[float]:
        return [r[1][name][norm] for r in self.rows]

    def rates(self, name: str, norm: str) -> list[float]:
        return spatial_rates(self.steps, self.series(name, norm))

    def table(self, norm_kind: str):
        """Header and rows in the published layout; ``norm_kind`` is ``L2`` or ``H1``.

        For ``H1`` the Darcy velocity column is its broken H1 error.
        """
        header = ["h_or_dt"]
        for short, _ in REPORT_FIELDS:
            header += [f"err_{short}_{norm_kind}", "rate"]
        cols = {name: self.series(name, norm_kind) for _, name in REPORT_FIELDS}
        rates = {}
        for _, name in REPORT_FIELDS:
            rates[name] = [None] + (self.rates(name, norm_kind) if len(self.rows) > 1 else [])
        body = []
        for i, h in enumerate(self.steps):
            row = [h]
            for _, name in REPORT_FIELDS:
                row += [cols[name][i], rates[name][i]]
            body.append(row)
        return header, body

    def write_csv(self, path_l2, path_h1=None) -> None:
        kinds = [("L2", path_l2)] + ([("H1", path_h1)] if path_h1 else [])
        for kind, path in kinds:
            header, body = self.table(kind)
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                for row in body:
                    w.writerow(["" if v is None else repr(float(v)) for v in row])


def solve_manufactured(problem: ManufacturedProblem, config: RunConfig, spaces: Spaces | None = None):
    """Run one sample of a manufactured problem; returns ``(state, spaces, errors)``."""
    if spaces is None:
        spaces = config.build_spaces()
    state, _ = run_sample(config, problem.conductivity(), problem.problem_data(), spaces, record=False)
    return state, spaces, error_norms(state, spaces, problem)


def spatial_study(problem: ManufacturedProblem, config: RunConfig, levels) -> ConvergenceReport:
    """Errors at ``t = T`` for meshes ``h = 1/n``, ``n`` in ``levels``."""
    report = ConvergenceReport("h")
    for n in levels:
        cfg = RunConfig(config.params, config.dt, config.T, int(n), config.darcy_family, config.solver_tol)
        _, _, errs = solve_manufactured(problem, cfg)
        report.add(1.0 / n, errs)
    return report


def temporal_study(problem: ManufacturedProblem, config: RunConfig, dts):
    """Final states for each ``dt`` on the mesh of ``config``; returns ``(states, spaces, orders)``."""
    spaces = config.build_spaces()
    states = []
    for dt in dts:
        cfg = RunConfig(config.params, float(dt), config.T, config.n, config.darcy_family, config.solver_tol)
        state, _ = run_sample(cfg, problem.conductivity(), problem.problem_data(), spaces, record=False)
        states.append(state)
    return states, spaces, temporal_order(states, spaces)


def interpolation_errors(problem: ManufacturedProblem, spaces: Spaces, t: float) -> dict:
    """Errors of the plain interpolant of the exact fields (no solve)."""
    from .space import interpolate

    data = problem.problem_data()
    st = CoupledState(
        t,
        interpolate(data.at("u_f", t, vector=True), spaces.V_f),
        interpolate(data.at("p_f", t), spaces.Q_f),
        interpolate(data.at("theta_f", t), spaces.W_f),
        interpolate(data.at("u_p", t, vector=True), spaces.V_p),
        interpolate(data.at("phi_p", t), spaces.Q_p),
        interpolate(data.at("theta_p", t), spaces.W_p),
    )
    return error_norms(st, spaces, problem)


@dataclass(frozen=True)
class RandomConductivityFamily:
    """Maps an affine-uniform conductivity sample to its manufactured problem (picklable)."""

    sigma: float = 0.1
    a: float = 1.0
    params: PhysicalParams = field(default_factory=PhysicalParams)

    def __call__(self, sample: ConductivitySample) -> ManufacturedProblem:
        if sample.kind != "affine_uniform":
            raise ValueError(f"manufactured random problem needs an affine_uniform sample, got {sample.kind}")
        mp = random_conductivity_problem(sample.lambda_draw, self.sigma, self.a, self.params)
        if abs(mp.k - sample.value) > 1e-12 * max(1.0, abs(mp.k)):
            raise ValueError(f"sample conductivity {sample.value} does not match sigma={self.sigma}")
        return mp
