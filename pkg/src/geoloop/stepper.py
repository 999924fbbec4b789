"""March one conductivity sample through the four decoupled sub-steps.

Per time step: Navier-Stokes, fluid temperature, Darcy, porous temperature,
in that order.  Everything lagged comes from level ``n``; only the porous
temperature solve sees a level ``n+1`` quantity (the new fluid temperature,
in its penalty term).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    DarcyOperator,
    FluidHeatOperator,
    FormContext,
    NavierStokesOperator,
    PhysicalParams,
    PorousHeatOperator,
    ProblemData,
    Spaces,
)
from .linalg import RESIDUAL_TOL, SolverError, SparseSystem, eliminate_matrix, eliminate_rhs, factorize, solve
from .mesh import unit_channel_mesh
from .space import interpolate

log = logging.getLogger(__name__)

FIELDS = ("u_f", "p_f", "theta_f", "u_p", "phi_p", "theta_p")


@dataclass(frozen=True)
class CoupledState:
    t: float
    u_f: np.ndarray
    p_f: np.ndarray
    theta_f: np.ndarray
    u_p: np.ndarray
    phi_p: np.ndarray
    theta_p: np.ndarray

    def fields(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in FIELDS}


@dataclass(frozen=True)
class RunConfig:
    params: PhysicalParams = field(default_factory=PhysicalParams)
    dt: float = 0.001
    T: float = 0.5
    n: int = 8  # cells per unit length; h = 1/n
    darcy_family: str = "BDM1"
    solver_tol: float = RESIDUAL_TOL

    @property
    def n_steps(self) -> int:
        N = int(round(self.T / self.dt))
        if N < 1 or abs(N * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"T={self.T} is not an integer multiple of dt={self.dt}")
        return N

    def validate(self) -> list[str]:
        errs = self.params.validate()
        if not self.dt > 0:
            errs.append("dt must be > 0")
        if not self.T > 0:
            errs.append("T must be > 0")
        if self.dt > 0 and self.T > 0:
            try:
                self.n_steps
            except ValueError as exc:
                errs.append(str(exc))
        if int(self.n) != self.n or self.n < 1:
            errs.append("mesh level n must be a positive integer")
        if self.darcy_family not in ("BDM1", "RT0"):
            errs.append(f"darcy_family must be BDM1 or RT0, got {self.darcy_family!r}")
        return errs

    def build_spaces(self) -> Spaces:
        return Spaces(unit_channel_mesh(self.n), self.darcy_family)


def initial_state(spaces: Spaces, problem: ProblemData) -> CoupledState:
    S = spaces
    return CoupledState(
        t=0.0,
        u_f=interpolate(problem.at("u_f", 0.0, vector=True), S.V_f),
        p_f=interpolate(problem.at("p_f", 0.0), S.Q_f),
        theta_f=interpolate(problem.at("theta_f", 0.0), S.W_f),
        u_p=interpolate(problem.at("u_p", 0.0, vector=True), S.V_p),
        phi_p=interpolate(problem.at("phi_p", 0.0), S.Q_p),
        theta_p=interpolate(problem.at("theta_p", 0.0), S.W_p),
    )


class DecoupledStepper:
    """Sub-step solvers for one sample; the Darcy factorization is built once and reused."""

    def __init__(self, spaces: Spaces, ctx: FormContext, problem: ProblemData, tol: float = RESIDUAL_TOL):
        self.spaces, self.ctx, self.problem, self.tol = spaces, ctx, problem, tol
        self.ns = NavierStokesOperator(spaces, ctx)
        self.heat_f = FluidHeatOperator(spaces, ctx)
        self.darcy = DarcyOperator(spaces, ctx)
        self.heat_p = PorousHeatOperator(spaces, ctx)
        self._darcy_matrix = None
        self._darcy_factor = None
        self.darcy_factorizations = 0

    def _solve(self, step, A, b, constraints):
        system = SparseSystem(eliminate_matrix(A, constraints.dofs), eliminate_rhs(A, b, constraints), constraints)
        try:
            return solve(system, tol=self.tol, mode="symmetric")
        except SolverError as exc:
            raise SolverError(f"{step}: {exc}", pivot=exc.pivot, step=step) from exc

    def step1(self, u_f_old, theta_f_old, t_next):
        op = self.ns
        x, _ = self._solve("step1 (Navier-Stokes)", op.matrix(u_f_old),
                           op.rhs(u_f_old, theta_f_old, t_next, self.problem), op.constraints(t_next, self.problem))
        u, p, _ = op.split(x)
        return u, p

    def step2(self, u_f_old, theta_f_old, theta_p_old, t_next):
        op = self.heat_f
        x, _ = self._solve("step2 (fluid temperature)", op.matrix(u_f_old),
                           op.rhs(theta_f_old, theta_p_old, t_next, self.problem), op.constraints(t_next, self.problem))
        return x

    def step3(self, u_p_old, theta_p_old, t_next):
        op = self.darcy
        cons = op.constraints(t_next, self.problem)
        b = op.rhs(u_p_old, theta_p_old, t_next, self.problem)
        if self._darcy_factor is None:
            self._darcy_matrix = eliminate_matrix(op.matrix(), cons.dofs)
            try:
                self._darcy_factor = factorize(self._darcy_matrix)
            except SolverError as exc:
                raise SolverError(f"step3 (Darcy): {exc}", pivot=exc.pivot, step="step3") from exc
            self.darcy_factorizations += 1
        rhs = eliminate_rhs(op.matrix(), b, cons)
        system = SparseSystem(self._darcy_matrix, rhs, cons)
        try:
            x, _ = solve(system, reuse=self._darcy_factor, tol=self.tol)
        except SolverError as exc:
            raise SolverError(f"step3 (Darcy): {exc}", pivot=exc.pivot, step="step3") from exc
        u, phi, _ = op.split(x)
        return u, phi

    def step4(self, u_p_old, theta_p_old, theta_f_new, theta_f_old, t_next):
        op = self.heat_p
        x, _ = self._solve("step4 (porous temperature)", op.matrix(u_p_old),
                           op.rhs(theta_p_old, theta_f_new, theta_f_old, t_next, self.problem),
                           op.constraints(t_next, self.problem))
        return x

    def advance(self, state: CoupledState, t_next: float | None = None) -> CoupledState:
        if t_next is None:
            t_next = state.t + self.ctx.dt
        u_f, p_f = self.step1(state.u_f, state.theta_f, t_next)
        theta_f = self.step2(state.u_f, state.theta_f, state.theta_p, t_next)
        u_p, phi_p = self.step3(state.u_p, state.theta_p, t_next)
        theta_p = self.step4(state.u_p, state.theta_p, theta_f, state.theta_f, t_next)
        return CoupledState(t_next, u_f, p_f, theta_f, u_p, phi_p, theta_p)

    # -- diagnostics -----------------------------------------------------------
    def l2_norms(self, state: CoupledState) -> dict[str, float]:
        S = self.spaces
        q = lambda M, v: float(np.sqrt(max(v @ (M @ v), 0.0)))
        return {
            "u_f": q(self.ns.mass, state.u_f),
            "p_f": q(self.heat_f.mass, state.p_f),
            "theta_f": q(self.heat_f.mass, state.theta_f),
            "u_p": q(self.darcy.mass, state.u_p),
            "phi_p": float(np.sqrt(np.sum(S.Q_p.areas * state.phi_p**2))),
            "theta_p": q(self.heat_p.mass, state.theta_p),
        }


def advance(state: CoupledState, ctx: FormContext, problem: ProblemData, spaces: Spaces) -> CoupledState:
    """One time step from a fresh stepper (no factorization reuse)."""
    return DecoupledStepper(spaces, ctx, problem).advance(state)


def run_sample(config: RunConfig, sample, problem: ProblemData, spaces: Spaces | None = None,
               record: bool = True):
    """Interpolate the initial data and take ``T/dt`` steps.

    Returns ``(final_state, diagnostics)`` where diagnostics has one row per
    level ``n = 0..N`` with the L2 norms of the six fields.
    """
    errs = config.validate()
    if errs:
        raise ValueError("; ".join(errs))
    if spaces is None:
        spaces = config.build_spaces()
    ctx = FormContext(config.params, sample, config.dt, spaces.h)
    stepper = DecoupledStepper(spaces, ctx, problem, tol=config.solver_tol)
    state = initial_state(spaces, problem)
    rows = []
    if record:
        rows.append({"step": 0, "t": 0.0, **stepper.l2_norms(state)})
    N = config.n_steps
    for n in range(N):
        state = stepper.advance(state, t_next=(n + 1) * config.dt)
        if record:
            rows.append({"step": n + 1, "t": state.t, **stepper.l2_norms(state)})
    log.debug("sample finished: %d steps, %d Darcy factorizations", N, stepper.darcy_factorizations)
    return state, rows


def write_diagnostics_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t", *FIELDS])
        for r in rows:
            w.writerow([r["step"], repr(float(r["t"])), *(repr(float(r[f])) for f in FIELDS)])
