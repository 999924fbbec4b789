"""Degree-of-freedom numbering, tabulation, interpolation and Dirichlet data.

Global dof layouts
------------------
P1        vertex ``v`` -> ``v``
P0        cell ``c`` -> ``c``
MINI      component ``k`` -> ``k*(nv+nc) + v`` (vertex) or ``k*(nv+nc) + nv + c`` (bubble)
BDM1      edge ``e``, moment ``m`` -> ``2*e + m``
RT0       edge ``e`` -> ``e``

H(div) global functionals use each edge oriented from its lower to higher
vertex index, normal ``rot(p_hi - p_lo)`` (clockwise quarter turn of the
edge vector, so its length is the edge length) and Legendre moments
``{1, 2s-1}`` in the edge parameter ``s``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .elements import (
    BDM1,
    MINI,
    P0,
    P1,
    RT0,
    ElementFamily,
    LOCAL_EDGES,
    P1_REF_GRADS,
    QuadratureRule,
    affine_maps,
    edge_moment_weights,
    edge_quadrature,
    eval_bubble,
    hdiv_reference,
    quadrature,
)
from .mesh import SubMesh


@dataclass(frozen=True)
class Constraints:
    """Pinned dofs and their values."""

    dofs: np.ndarray
    values: np.ndarray

    @classmethod
    def empty(cls) -> "Constraints":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0))

    def merged(self, other: "Constraints") -> "Constraints":
        """Union; ``other`` wins where both pin the same dof."""
        dofs = np.concatenate([self.dofs, other.dofs])
        vals = np.concatenate([self.values, other.values])
        # keep the last occurrence of each dof
        rev_dofs = dofs[::-1]
        uniq, idx = np.unique(rev_dofs, return_index=True)
        return Constraints(uniq, vals[::-1][idx])

    def __len__(self) -> int:
        return len(self.dofs)


@dataclass
class Tabulation:
    """Basis data at quadrature points of every cell.

    ``vals``: (nq, nloc) for Lagrange-type scalars, (nc, nq, nloc, 2) for H(div)
    ``grads``: (nc, nq, nloc, 2) physical gradients (Lagrange-type only)
    ``divs``: (nc, nloc) (H(div) only)
    ``weights``: (nc, nq) physical quadrature weights
    ``points``: (nc, nq, 2) physical quadrature points
    """

    vals: np.ndarray
    grads: np.ndarray | None
    divs: np.ndarray | None
    weights: np.ndarray
    points: np.ndarray


def _contract(loc, arr):
    """``sum_i loc[c, i] * arr[c, q, i, k]`` as a short loop over the local index."""
    out = loc[:, None, 0, None] * arr[:, :, 0]
    for i in range(1, loc.shape[1]):
        out = out + loc[:, None, i, None] * arr[:, :, i]
    return out


class DofMap:
    """Global numbering of one element family on one subdomain."""

    def __init__(self, mesh: SubMesh, family: ElementFamily):
        self.mesh = mesh
        self.family = family
        self.subdomain = mesh.name
        nv, nc, ne = mesh.n_vertices, mesh.n_cells, mesh.n_edges
        t = mesh.triangles
        signs = None
        if family is P1:
            cell_dofs = t.copy()
            n = nv
        elif family is P0:
            cell_dofs = np.arange(nc)[:, None]
            n = nc
        elif family is MINI:
            scal = np.column_stack([t, nv + np.arange(nc)])
            cell_dofs = np.hstack([scal, scal + nv + nc])
            n = 2 * (nv + nc)
        elif family in (BDM1, RT0):
            a = t[:, LOCAL_EDGES[:, 0]]
            b = t[:, LOCAL_EDGES[:, 1]]
            d = np.where(a < b, 1.0, -1.0)
            if family is BDM1:
                cell_dofs = np.stack([2 * mesh.tri_edges, 2 * mesh.tri_edges + 1], axis=2).reshape(nc, 6)
                signs = np.stack([d, np.ones_like(d)], axis=2).reshape(nc, 6)
                n = 2 * ne
            else:
                cell_dofs = mesh.tri_edges.copy()
                signs = d
                n = ne
        else:
            raise ValueError(f"unsupported family {family.name}")
        self.cell_dofs = cell_dofs
        self.cell_signs = np.ones(cell_dofs.shape) if signs is None else signs
        self.n_dofs = int(n)

    def __repr__(self) -> str:
        return f"DofMap({self.family.name}, {self.subdomain}, n_dofs={self.n_dofs})"

    @cached_property
    def cell_vertices(self) -> np.ndarray:
        return self.mesh.vertices[self.mesh.triangles]

    @cached_property
    def maps(self):
        return affine_maps(self.cell_vertices)

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * np.abs(self.maps[1])

    def physical_points(self, rule: QuadratureRule) -> np.ndarray:
        return np.einsum("qv,cvk->cqk", rule.points, self.cell_vertices)

    def tabulate(self, rule: QuadratureRule | int) -> Tabulation:
        """Basis values/gradients at ``rule`` points.  For MINI the scalar 4-function basis is returned."""
        if isinstance(rule, int):
            rule = quadrature(rule)
        J, det, inv = self.maps
        weights = rule.weights[None, :] * np.abs(det)[:, None]
        points = self.physical_points(rule)
        nc, nq = len(det), len(rule.weights)
        fam = self.family
        if fam is P1:
            vals = rule.points.copy()
            g = np.einsum("ik,ckj->cij", P1_REF_GRADS, inv)
            grads = np.broadcast_to(g[:, None], (nc, nq, 3, 2))
            return Tabulation(vals, grads, None, weights, points)
        if fam is P0:
            return Tabulation(np.ones((nq, 1)), np.zeros((nc, nq, 1, 2)), None, weights, points)
        if fam is MINI:
            bval, bgrad = eval_bubble(rule.points)
            vals = np.column_stack([rule.points, bval])
            ref_grads = np.concatenate(
                [np.broadcast_to(P1_REF_GRADS, (nq, 3, 2)), bgrad[:, None, :]], axis=1
            )
            grads = np.einsum("qik,ckj->cqij", ref_grads, inv)
            return Tabulation(vals, grads, None, weights, points)
        ref_vals, ref_div = hdiv_reference(fam, rule.xi)
        vals = np.einsum("cij,qdj->cqdi", J, ref_vals) / det[:, None, None, None]
        vals = vals * self.cell_signs[:, None, :, None]
        divs = ref_div[None, :] / det[:, None] * self.cell_signs
        return Tabulation(vals, None, divs, weights, points)

    # -- evaluation -------------------------------------------------------
    def local_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        return np.asarray(coeffs)[self.cell_dofs]

    def evaluate(self, coeffs, tab: Tabulation):
        """Values and gradients of a discrete function at quadrature points.

        Scalars: values (nc, nq), gradients (nc, nq, 2).
        MINI: values (nc, nq, 2), gradients (nc, nq, 2, 2) indexed [component, derivative].
        H(div): values (nc, nq, 2), divergence (nc,).
        """
        loc = self.local_coeffs(coeffs)
        fam = self.family
        if fam in (P1, P0):
            return loc @ tab.vals.T, _contract(loc, tab.grads)
        if fam is MINI:
            lx, ly = loc[:, :4], loc[:, 4:]
            vals = np.stack([lx @ tab.vals.T, ly @ tab.vals.T], axis=-1)
            grads = np.stack([_contract(lx, tab.grads), _contract(ly, tab.grads)], axis=2)
            return vals, grads
        return _contract(loc, tab.vals), np.sum(loc * tab.divs, axis=1)

    def broken_gradient(self, coeffs, tab: Tabulation) -> np.ndarray:
        """Cellwise gradient (nc, nq, 2, 2) of an H(div) function; constant per cell."""
        if self.family not in (BDM1, RT0):
            raise ValueError("broken gradient only needed for H(div) families")
        J, det, inv = self.maps
        loc = self.local_coeffs(coeffs) * self.cell_signs
        # reference basis is affine: d v/d x = J (d vhat/d xi) J^{-1} / det
        eps = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        ref_vals, _ = hdiv_reference(self.family, eps)
        dxi = np.stack([ref_vals[1] - ref_vals[0], ref_vals[2] - ref_vals[0]], axis=-1)  # (d, k, m)
        g = np.einsum("cd,dkm->ckm", loc, dxi)
        G = np.einsum("cik,ckm,cmj->cij", J, g, inv) / det[:, None, None]
        nq = tab.weights.shape[1]
        return np.broadcast_to(G[:, None], (len(det), nq, 2, 2))

    # -- integrals ----------------------------------------------------------
    def mean_vector(self, rule: int = 2) -> np.ndarray:
        """``int phi_i dx`` for scalar families (zero-mean constraint row)."""
        if self.family not in (P1, P0):
            raise ValueError("mean constraint defined for scalar pressure spaces")
        tab = self.tabulate(rule)
        local = np.einsum("cq,qi->ci", tab.weights, tab.vals)
        out = np.zeros(self.n_dofs)
        np.add.at(out, self.cell_dofs, local)
        return out

    # -- boundary --------------------------------------------------------------
    def boundary_dofs(self, tags) -> np.ndarray:
        m = self.mesh
        fam = self.family
        if fam is P1:
            return m.boundary_vertices(tags)
        if fam is MINI:
            v = m.boundary_vertices(tags)
            return np.concatenate([v, v + m.n_vertices + m.n_cells])
        if fam is BDM1:
            e = m.boundary_edges(tags)
            return np.sort(np.concatenate([2 * e, 2 * e + 1]))
        if fam is RT0:
            return m.boundary_edges(tags)
        if fam is P0:
            return np.zeros(0, dtype=np.int64)
        raise ValueError(fam.name)


def build_dofmap(mesh: SubMesh, family: ElementFamily, subdomain: str | None = None) -> DofMap:
    if subdomain is not None and subdomain != mesh.name:
        raise ValueError(f"submesh is {mesh.name!r}, asked for {subdomain!r}")
    return DofMap(mesh, family)


def _call_vector(f, x, y):
    v = np.asarray(f(x, y), dtype=float)
    return np.broadcast_to(v, (2,) + np.shape(x))


def edge_moments(f, mesh: SubMesh, family: ElementFamily, edges=None) -> np.ndarray:
    """Global H(div) functionals of a vector field on ``edges`` (default all); shape (len, nmom)."""
    if edges is None:
        edges = np.arange(mesh.n_edges)
    s, w = edge_quadrature(4)
    mom = edge_moment_weights(family, s)
    p = mesh.vertices[mesh.edges[edges]]
    pa, pb = p[:, 0], p[:, 1]
    d = pb - pa
    nu = np.column_stack([d[:, 1], -d[:, 0]])
    pts = pa[:, None, :] + s[None, :, None] * d[:, None, :]
    fx, fy = _call_vector(f, pts[..., 0], pts[..., 1])
    flux = fx * nu[:, 0, None] + fy * nu[:, 1, None]
    return flux @ (w * mom).T


def interpolate(f, dofmap: DofMap) -> np.ndarray:
    """Canonical interpolant: nodal values (P1), cell means (P0), edge moments (H(div)).

    MINI interpolates the P1 part at the vertices and leaves bubble coefficients at 0.
    ``f`` is called as ``f(x, y)`` with array arguments; vector fields return ``(fx, fy)``.
    """
    m = dofmap.mesh
    fam = dofmap.family
    x, y = m.vertices[:, 0], m.vertices[:, 1]
    if fam is P1:
        return np.broadcast_to(np.asarray(f(x, y), dtype=float), x.shape).copy()
    if fam is MINI:
        fx, fy = _call_vector(f, x, y)
        out = np.zeros(dofmap.n_dofs)
        nv, nc = m.n_vertices, m.n_cells
        out[:nv] = fx
        out[nv + nc : 2 * nv + nc] = fy
        return out
    if fam is P0:
        tab = dofmap.tabulate(8)
        vals = np.broadcast_to(f(tab.points[..., 0], tab.points[..., 1]), tab.weights.shape)
        return (tab.weights * vals).sum(axis=1) / tab.weights.sum(axis=1)
    if fam in (BDM1, RT0):
        return edge_moments(f, m, fam).ravel()
    raise ValueError(fam.name)


def apply_dirichlet(dofmap: DofMap, tags, g, constrained: Constraints | None = None) -> Constraints:
    """Pin the dofs supported on the tagged boundary to the interpolant of ``g``.

    For H(div) families only the normal-moment dofs of tagged edges are pinned.
    """
    base = Constraints.empty() if constrained is None else constrained
    tags = tuple(tags)
    if not tags:
        return base
    m = dofmap.mesh
    fam = dofmap.family
    if fam in (BDM1, RT0):
        edges = m.boundary_edges(tags)
        vals = edge_moments(g, m, fam, edges).ravel()
        dofs = dofmap.boundary_dofs(tags)
        # boundary_edges is sorted, so moments line up with sorted dofs
        return base.merged(Constraints(dofs, vals))
    verts = m.boundary_vertices(tags)
    x, y = m.vertices[verts, 0], m.vertices[verts, 1]
    if fam is P1:
        vals = np.broadcast_to(np.asarray(g(x, y), dtype=float), x.shape)
        return base.merged(Constraints(verts, vals.copy()))
    if fam is MINI:
        gx, gy = _call_vector(g, x, y)
        off = m.n_vertices + m.n_cells
        return base.merged(Constraints(np.concatenate([verts, verts + off]), np.concatenate([gx, gy])))
    raise ValueError(f"no boundary dofs for {fam.name}")
