"""Bilinear, trilinear, interface and load forms of the four decoupled sub-steps.

Every sub-step is an operator object holding the parts of its matrix that do
not change between time steps; the module-level ``assemble_*`` functions
build one system from scratch and are what the tests exercise.

Unknown layouts
---------------
Navier-Stokes  ``[u_f (MINI) | p_f (P1) | mean multiplier]``
Darcy          ``[u_p (BDM1/RT0) | phi_p (P0) | mean multiplier]``
temperatures   plain P1 vectors on their own subdomain
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .elements import BDM1, MINI, P0, P1, RT0, ElementFamily, edge_quadrature, quadrature
from .linalg import Constraints, SparseSystem, apply_constraints
from .mesh import Mesh, interface_edges
from .space import DofMap, apply_dirichlet

ASSEMBLY_DEGREE = 6
XI = np.array([0.0, 1.0])  # buoyancy direction


@dataclass(frozen=True)
class PhysicalParams:
    Pr: float = 1.0
    Ra: float = 1.0
    Ca: float = 1.0
    L: float = 1.0
    k_f: float = 1.0
    k_p: float = 1.0
    gamma: float = 1e5

    def validate(self) -> list[str]:
        errs = [f"{n} must be > 0" for n in ("Pr", "Ca", "L", "k_f", "k_p") if not getattr(self, n) > 0]
        if not self.Ra >= 0:
            errs.append("Ra must be >= 0")
        if not self.gamma >= 0:
            errs.append("gamma must be >= 0")
        return errs


@dataclass(frozen=True)
class ProblemData:
    """Data for one realisation: initial/boundary fields and forcing.

    Every entry is ``f(x, y, t)`` with array ``x, y``; vector fields return a
    pair.  ``None`` means identically zero.  ``darcy_load`` is an extra Darcy
    momentum source used only by manufactured-solution runs.
    """

    u_f: Optional[Callable] = None
    theta_f: Optional[Callable] = None
    u_p: Optional[Callable] = None
    theta_p: Optional[Callable] = None
    f_f: Optional[Callable] = None
    upsilon_f: Optional[Callable] = None
    upsilon_p: Optional[Callable] = None
    darcy_load: Optional[Callable] = None
    p_f: Optional[Callable] = None
    phi_p: Optional[Callable] = None

    def scalar(self, name, x, y, t):
        f = getattr(self, name)
        if f is None:
            return np.zeros(np.shape(x))
        return np.broadcast_to(np.asarray(f(x, y, t), dtype=float), np.shape(x))

    def vector(self, name, x, y, t):
        f = getattr(self, name)
        if f is None:
            return np.zeros((2,) + np.shape(x))
        return np.broadcast_to(np.asarray(f(x, y, t), dtype=float), (2,) + np.shape(x))

    def at(self, name, t, vector=False):
        """Time slice ``(x, y) -> value`` for interpolation and Dirichlet data."""
        if vector:
            return lambda x, y: self.vector(name, x, y, t)
        return lambda x, y: self.scalar(name, x, y, t)


ZERO_PROBLEM = ProblemData()


@dataclass(frozen=True)
class FormContext:
    params: PhysicalParams
    sample: object  # randfield.ConductivitySample
    dt: float
    h_penalty: float

    def validate(self) -> None:
        errs = self.params.validate()
        if not self.dt > 0:
            errs.append("dt must be > 0")
        if not self.h_penalty > 0:
            errs.append("h_penalty must be > 0")
        if errs:
            raise ValueError("; ".join(errs))

    @property
    def penalty(self) -> float:
        return self.params.k_f * self.params.gamma / self.h_penalty


@dataclass
class InterfaceData:
    """Matched interface edges, ordered by x.

    ``fluid_verts``/``porous_verts`` hold the same two global vertices in the
    same order, in fluid-local and porous-local numbering.
    """

    fluid_verts: np.ndarray
    porous_verts: np.ndarray
    fluid_cells: np.ndarray
    porous_cells: np.ndarray
    lengths: np.ndarray
    normal_f: np.ndarray  # outward unit normal of the fluid side, (nI, 2)


def _local_index(global_ids: np.ndarray, size: int) -> np.ndarray:
    inv = -np.ones(size, dtype=np.int64)
    inv[global_ids] = np.arange(len(global_ids))
    return inv


class Spaces:
    """All discrete spaces of one mesh plus the cached constant local matrices."""

    def __init__(self, mesh: Mesh, darcy_family: ElementFamily | str = BDM1, degree: int = ASSEMBLY_DEGREE):
        if isinstance(darcy_family, str):
            darcy_family = {"BDM1": BDM1, "RT0": RT0}[darcy_family]
        self.mesh = mesh
        self.fluid = mesh.submesh("fluid")
        self.porous = mesh.submesh("porous")
        self.V_f = DofMap(self.fluid, MINI)
        self.Q_f = DofMap(self.fluid, P1)
        self.W_f = DofMap(self.fluid, P1)
        self.V_p = DofMap(self.porous, darcy_family)
        self.Q_p = DofMap(self.porous, P0)
        self.W_p = DofMap(self.porous, P1)
        self.degree = degree
        self.rule = quadrature(degree)
        self.tab_vf = self.V_f.tabulate(self.rule)
        self.tab_wf = self.W_f.tabulate(self.rule)
        self.tab_vp = self.V_p.tabulate(self.rule)
        self.tab_wp = self.W_p.tabulate(self.rule)
        self.interface = self._interface()
        self.velocity_tags_f = ("left", "right", "top", "interface")
        self.velocity_tags_p = ("left", "right", "bottom", "interface")
        self.temperature_tags_f = self.fluid.exterior_tags()
        self.temperature_tags_p = self.porous.exterior_tags()

    @property
    def h(self) -> float:
        return self.mesh.h_grid

    def _interface(self) -> InterfaceData:
        m = self.mesh
        rows = interface_edges(m)
        e = np.array([r[0] for r in rows], dtype=np.int64)
        tf = np.array([r[1] for r in rows], dtype=np.int64)
        tp = np.array([r[2] for r in rows], dtype=np.int64)
        gv = m.edges[e]
        lf = _local_index(self.fluid.vertex_global, m.n_vertices)[gv]
        lp = _local_index(self.porous.vertex_global, m.n_vertices)[gv]
        cf = _local_index(self.fluid.tri_global, len(m.triangles))[tf]
        cp = _local_index(self.porous.tri_global, len(m.triangles))[tp]
        p = m.vertices[gv]
        d = p[:, 1] - p[:, 0]
        length = np.linalg.norm(d, axis=1)
        nrm = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
        centroid = m.vertices[m.triangles[tf]].mean(axis=1)
        away = np.einsum("ij,ij->i", nrm, p[:, 0] - centroid) > 0
        nrm[~away] *= -1.0
        return InterfaceData(lf, lp, cf, cp, length, nrm)

    # -- constant local matrices -------------------------------------------------
    def scalar_mass_local(self, tab) -> np.ndarray:
        return np.einsum("cq,qi,qj->cij", tab.weights, tab.vals, tab.vals)

    def scalar_stiffness_local(self, tab) -> np.ndarray:
        return np.einsum("cq,cqik,cqjk->cij", tab.weights, tab.grads, tab.grads)

    def divergence_local_f(self) -> np.ndarray:
        """``(q_j, div v_i)`` for P1 pressure rows and MINI velocity columns, (nc, 3, 8)."""
        tv, tq = self.tab_vf, self.tab_wf
        dx = np.einsum("cq,qj,cqi->cji", tv.weights, tq.vals, tv.grads[..., 0])
        dy = np.einsum("cq,qj,cqi->cji", tv.weights, tq.vals, tv.grads[..., 1])
        return np.concatenate([dx, dy], axis=2)

    def interface_mass(self, rows: str, cols: str) -> sp.csr_matrix:
        """``int_I phi_j psi_i dl`` with test side ``rows`` and trial side ``cols``."""
        I = self.interface
        s, w = edge_quadrature(2)
        lam = np.column_stack([1.0 - s, s])
        local = np.einsum("e,q,qi,qj->eij", I.lengths, w, lam, lam)
        side = {"fluid": (I.fluid_verts, self.W_f.n_dofs), "porous": (I.porous_verts, self.W_p.n_dofs)}
        r, nr = side[rows]
        c, nc = side[cols]
        R = np.broadcast_to(r[:, :, None], local.shape)
        C = np.broadcast_to(c[:, None, :], local.shape)
        return sp.coo_matrix((local.ravel(), (R.ravel(), C.ravel())), shape=(nr, nc)).tocsr()


def _scatter(rows, cols, local, shape) -> sp.csr_matrix:
    R = np.broadcast_to(rows[:, :, None], local.shape)
    C = np.broadcast_to(cols[:, None, :], local.shape)
    A = sp.coo_matrix((local.ravel(), (R.ravel(), C.ravel())), shape=shape).tocsr()
    A.sum_duplicates()
    return A


def _load(dofs, local, n) -> np.ndarray:
    out = np.zeros(n)
    np.add.at(out, dofs, local)
    return out


def skew_convection_local(weights, wvals, test_vals, trial_grads) -> np.ndarray:
    """Local ``1/2 (N - N^T)`` with ``N_ij = int (w . grad phi_j) phi_i``.

    ``test_vals`` (nq, n) or (nc, nq, n); ``trial_grads`` (nc, nq, n, 2); ``wvals`` (nc, nq, 2).
    """
    adv = wvals[..., None, 0] * trial_grads[..., 0] + wvals[..., None, 1] * trial_grads[..., 1]
    wadv = weights[..., None] * adv
    if test_vals.ndim == 2:
        N = np.matmul(test_vals.T, wadv)
    else:
        N = np.matmul(test_vals.transpose(0, 2, 1), wadv)
    return 0.5 * (N - N.transpose(0, 2, 1))


def interface_flux_vector(theta_f_coeffs, target: str, spaces: Spaces) -> np.ndarray:
    """``int_I (n_f . grad theta_f) phi dl`` using the fluid-side gradient on each interface edge."""
    I = spaces.interface
    grads = np.einsum("ci,cik->ck", theta_f_coeffs[spaces.W_f.cell_dofs], spaces.tab_wf.grads[:, 0])
    gn = np.einsum("ek,ek->e", grads[I.fluid_cells], I.normal_f)
    s, w = edge_quadrature(2)
    lam = np.column_stack([1.0 - s, s])
    local = gn[:, None] * I.lengths[:, None] * (w @ lam)[None, :]
    if target == "fluid":
        return _load(I.fluid_verts, local, spaces.W_f.n_dofs)
    if target == "porous":
        return _load(I.porous_verts, local, spaces.W_p.n_dofs)
    raise ValueError(f"target must be 'fluid' or 'porous', got {target!r}")


# ---------------------------------------------------------------------------
# Step 1: Navier-Stokes
# ---------------------------------------------------------------------------
class NavierStokesOperator:
    def __init__(self, spaces: Spaces, ctx: FormContext):
        ctx.validate()
        self.spaces, self.ctx = spaces, ctx
        S = spaces
        pr, dt = ctx.params.Pr, ctx.dt
        nv, nq = S.V_f.n_dofs, S.Q_f.n_dofs
        self.nv, self.nq = nv, nq
        self.n = nv + nq + 1
        tab = S.tab_vf
        M4 = S.scalar_mass_local(tab)
        K4 = S.scalar_stiffness_local(tab)
        blk = M4 / dt + pr * K4
        cd = S.V_f.cell_dofs
        self.mass_local = M4
        self.mass = _scatter(cd[:, :4], cd[:, :4], M4, (nv, nv)) + _scatter(cd[:, 4:], cd[:, 4:], M4, (nv, nv))
        A = _scatter(cd[:, :4], cd[:, :4], blk, (nv, nv)) + _scatter(cd[:, 4:], cd[:, 4:], blk, (nv, nv))
        D = _scatter(S.Q_f.cell_dofs, cd, S.divergence_local_f(), (nq, nv))
        m = S.Q_f.mean_vector()
        self.D = D
        self.base = sp.bmat(
            [
                [A, -D.T, None],
                [D, None, sp.csr_matrix(m[:, None])],
                [None, sp.csr_matrix(m[None, :]), None],
            ],
            format="csr",
        )
        self._crow = np.concatenate([cd[:, :4], cd[:, 4:]])
        self._ccol = self._crow

    def convection_local(self, u_old) -> np.ndarray:
        S = self.spaces
        wv, _ = S.V_f.evaluate(u_old, S.tab_vf)
        return skew_convection_local(S.tab_vf.weights, wv, S.tab_vf.vals, S.tab_vf.grads)

    def convection(self, u_old) -> sp.csr_matrix:
        C = self.convection_local(u_old)
        return _scatter(self._crow, self._ccol, np.concatenate([C, C]), (self.nv, self.nv))

    def matrix(self, u_old) -> sp.csr_matrix:
        C = self.convection(u_old)
        C = sp.bmat([[C, None], [None, sp.csr_matrix((self.n - self.nv, self.n - self.nv))]], format="csr")
        return (self.base + C).tocsr()

    def rhs(self, u_old, theta_f_old, t_next, problem: ProblemData) -> np.ndarray:
        S, p = self.spaces, self.ctx.params
        tab = S.tab_vf
        th, _ = S.W_f.evaluate(theta_f_old, S.tab_wf)
        x, y = tab.points[..., 0], tab.points[..., 1]
        f = problem.vector("f_f", x, y, t_next)
        fy = f[1] + p.Pr * p.Ra * XI[1] * th
        fx = f[0] + p.Pr * p.Ra * XI[0] * th
        lx = (tab.weights * fx) @ tab.vals
        ly = (tab.weights * fy) @ tab.vals
        cd = S.V_f.cell_dofs
        b = self.mass @ u_old / self.ctx.dt + _load(cd[:, :4], lx, self.nv) + _load(cd[:, 4:], ly, self.nv)
        return np.concatenate([b, np.zeros(self.nq + 1)])

    def constraints(self, t_next, problem: ProblemData) -> Constraints:
        S = self.spaces
        return apply_dirichlet(S.V_f, S.velocity_tags_f, problem.at("u_f", t_next, vector=True))

    def split(self, x):
        return x[: self.nv], x[self.nv : self.nv + self.nq], x[-1]


def assemble_ns(ctx, u_old, theta_f_old, t_next, spaces: Spaces, problem: ProblemData = ZERO_PROBLEM,
                eliminate: bool = True) -> SparseSystem:
    op = NavierStokesOperator(spaces, ctx)
    system = SparseSystem(op.matrix(u_old), op.rhs(u_old, theta_f_old, t_next, problem))
    return apply_constraints(system, op.constraints(t_next, problem)) if eliminate else system


# ---------------------------------------------------------------------------
# Steps 2 and 4: temperatures
# ---------------------------------------------------------------------------
class _HeatOperator:
    side: str

    def __init__(self, spaces: Spaces, ctx: FormContext):
        ctx.validate()
        self.spaces, self.ctx = spaces, ctx
        W, tab = self._space()
        self.n = W.n_dofs
        cd = W.cell_dofs
        M = spaces.scalar_mass_local(tab)
        K = spaces.scalar_stiffness_local(tab)
        self.mass = _scatter(cd, cd, M, (self.n, self.n))
        self.stiffness = _scatter(cd, cd, K, (self.n, self.n))
        other = "porous" if self.side == "fluid" else "fluid"
        self.iface_self = spaces.interface_mass(self.side, self.side)
        self.iface_cross = spaces.interface_mass(self.side, other)
        self.base = (self.mass / ctx.dt + self._conductivity() * self.stiffness + ctx.penalty * self.iface_self).tocsr()

    def _space(self):
        raise NotImplementedError

    def _conductivity(self) -> float:
        raise NotImplementedError

    def _velocity_at_qp(self, u_old):
        raise NotImplementedError

    def convection_local(self, u_old) -> np.ndarray:
        W, tab = self._space()
        return skew_convection_local(tab.weights, self._velocity_at_qp(u_old), tab.vals, tab.grads)

    def convection(self, u_old) -> sp.csr_matrix:
        W, _ = self._space()
        return _scatter(W.cell_dofs, W.cell_dofs, self.convection_local(u_old), (self.n, self.n))

    def matrix(self, u_old) -> sp.csr_matrix:
        return (self.base + self.convection(u_old)).tocsr()

    def source(self, name, t_next, problem) -> np.ndarray:
        W, tab = self._space()
        f = problem.scalar(name, tab.points[..., 0], tab.points[..., 1], t_next)
        return _load(W.cell_dofs, (tab.weights * f) @ tab.vals, self.n)


class FluidHeatOperator(_HeatOperator):
    side = "fluid"

    def _space(self):
        return self.spaces.W_f, self.spaces.tab_wf

    def _conductivity(self):
        return self.ctx.params.k_f

    def _velocity_at_qp(self, u_old):
        S = self.spaces
        # W_f and V_f share the fluid cells and the assembly rule
        return S.V_f.evaluate(u_old, S.tab_vf)[0]

    def rhs(self, theta_f_old, theta_p_old, t_next, problem) -> np.ndarray:
        S, ctx = self.spaces, self.ctx
        return (
            self.mass @ theta_f_old / ctx.dt
            + ctx.params.k_f * interface_flux_vector(theta_f_old, "fluid", S)
            + ctx.penalty * (self.iface_cross @ theta_p_old)
            + self.source("upsilon_f", t_next, problem)
        )

    def constraints(self, t_next, problem) -> Constraints:
        S = self.spaces
        return apply_dirichlet(S.W_f, S.temperature_tags_f, problem.at("theta_f", t_next))


class PorousHeatOperator(_HeatOperator):
    side = "porous"

    def _space(self):
        return self.spaces.W_p, self.spaces.tab_wp

    def _conductivity(self):
        return self.ctx.params.k_p

    def _velocity_at_qp(self, u_old):
        S = self.spaces
        return S.V_p.evaluate(u_old, S.tab_vp)[0]

    def rhs(self, theta_p_old, theta_f_new, theta_f_old, t_next, problem) -> np.ndarray:
        S, ctx = self.spaces, self.ctx
        return (
            self.mass @ theta_p_old / ctx.dt
            - ctx.params.k_f * interface_flux_vector(theta_f_old, "porous", S)
            + ctx.penalty * (self.iface_cross @ theta_f_new)
            + self.source("upsilon_p", t_next, problem)
        )

    def constraints(self, t_next, problem) -> Constraints:
        S = self.spaces
        return apply_dirichlet(S.W_p, S.temperature_tags_p, problem.at("theta_p", t_next))


def assemble_theta_f(ctx, u_f_old, theta_f_old, theta_p_old, t_next, spaces: Spaces,
                     problem: ProblemData = ZERO_PROBLEM, eliminate: bool = True) -> SparseSystem:
    op = FluidHeatOperator(spaces, ctx)
    system = SparseSystem(op.matrix(u_f_old), op.rhs(theta_f_old, theta_p_old, t_next, problem))
    return apply_constraints(system, op.constraints(t_next, problem)) if eliminate else system


def assemble_theta_p(ctx, u_p_old, theta_p_old, theta_f_new, theta_f_old, t_next, spaces: Spaces,
                     problem: ProblemData = ZERO_PROBLEM, eliminate: bool = True) -> SparseSystem:
    op = PorousHeatOperator(spaces, ctx)
    system = SparseSystem(op.matrix(u_p_old), op.rhs(theta_p_old, theta_f_new, theta_f_old, t_next, problem))
    return apply_constraints(system, op.constraints(t_next, problem)) if eliminate else system


# ---------------------------------------------------------------------------
# Step 3: Darcy
# ---------------------------------------------------------------------------
class DarcyOperator:
    """Time-independent Darcy matrix for one conductivity sample."""

    def __init__(self, spaces: Spaces, ctx: FormContext):
        ctx.validate()
        self.spaces, self.ctx = spaces, ctx
        S, p = spaces, ctx.params
        tab = S.tab_vp
        self.k_qp = np.broadcast_to(
            np.asarray(ctx.sample.k_eval(tab.points[..., 0], tab.points[..., 1]), dtype=float), tab.weights.shape
        )
        if np.any(self.k_qp <= 0) or not np.all(np.isfinite(self.k_qp)):
            raise ValueError("conductivity sample is not positive at every quadrature point")
        nv, nq = S.V_p.n_dofs, S.Q_p.n_dofs
        self.nv, self.nq = nv, nq
        self.n = nv + nq + 1
        cd = S.V_p.cell_dofs
        MK = np.einsum("cq,cq,cqik,cqjk->cij", tab.weights, self.k_qp, tab.vals, tab.vals)
        M0 = np.einsum("cq,cqik,cqjk->cij", tab.weights, tab.vals, tab.vals)
        self.mass_k = _scatter(cd, cd, MK, (nv, nv))
        self.mass = _scatter(cd, cd, M0, (nv, nv))
        kint = (tab.weights * self.k_qp).sum(axis=1)
        Bloc = (kint[:, None] * tab.divs)[:, None, :]
        self.B = _scatter(S.Q_p.cell_dofs, cd, Bloc, (nq, nv))
        L2 = p.L**2
        A = (p.Ca / (L2 * ctx.dt)) * self.mass_k + p.Pr * self.mass
        m = S.Q_p.mean_vector()
        self.velocity_block = A.tocsr()
        self.base = sp.bmat(
            [
                [A, -self.B.T / L2, None],
                [self.B / L2, None, sp.csr_matrix(m[:, None])],
                [None, sp.csr_matrix(m[None, :]), None],
            ],
            format="csr",
        )

    def matrix(self) -> sp.csr_matrix:
        return self.base

    def rhs(self, u_p_old, theta_p_old, t_next, problem) -> np.ndarray:
        S, p = self.spaces, self.ctx.params
        tab = S.tab_vp
        L2 = p.L**2
        th, _ = S.W_p.evaluate(theta_p_old, S.tab_wp)
        x, y = tab.points[..., 0], tab.points[..., 1]
        g = problem.vector("darcy_load", x, y, t_next)
        coef = p.Pr * p.Ra / L2 * self.k_qp * th
        fx = g[0] + coef * XI[0]
        fy = g[1] + coef * XI[1]
        wf = tab.weights[..., None] * (fx[..., None] * tab.vals[..., 0] + fy[..., None] * tab.vals[..., 1])
        local = wf.sum(axis=1)
        b = (p.Ca / (L2 * self.ctx.dt)) * (self.mass_k @ u_p_old) + _load(S.V_p.cell_dofs, local, self.nv)
        return np.concatenate([b, np.zeros(self.nq + 1)])

    def constraints(self, t_next, problem) -> Constraints:
        S = self.spaces
        return apply_dirichlet(S.V_p, S.velocity_tags_p, problem.at("u_p", t_next, vector=True))

    def split(self, x):
        return x[: self.nv], x[self.nv : self.nv + self.nq], x[-1]


def assemble_darcy(ctx, u_p_old, theta_p_old, t_next, spaces: Spaces, problem: ProblemData = ZERO_PROBLEM,
                   eliminate: bool = True) -> SparseSystem:
    op = DarcyOperator(spaces, ctx)
    system = SparseSystem(op.matrix(), op.rhs(u_p_old, theta_p_old, t_next, problem))
    return apply_constraints(system, op.constraints(t_next, problem)) if eliminate else system
