"""Reference-element machinery on triangles.

Reference triangle has vertices (0,0), (1,0), (0,1) and area 1/2.  Points are
passed around as barycentric triples ``(l0, l1, l2)``; the reference
coordinates are ``(xi, eta) = (l1, l2)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

# local edge i is opposite local vertex i, traversed from its lower to higher local vertex
LOCAL_EDGES = np.array([[1, 2], [0, 2], [0, 1]])
REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
P1_REF_GRADS = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass(frozen=True)
class ElementFamily:
    name: str
    dofs_per_vertex: int
    dofs_per_edge: int
    dofs_per_cell: int
    value_kind: str  # "scalar" | "vector"

    @property
    def n_local(self) -> int:
        return 3 * self.dofs_per_vertex + 3 * self.dofs_per_edge + self.dofs_per_cell


P0 = ElementFamily("P0", 0, 0, 1, "scalar")
P1 = ElementFamily("P1", 1, 0, 0, "scalar")
MINI_BUBBLE = ElementFamily("MINI_bubble", 0, 0, 1, "scalar")
# vector MINI: P1 plus one bubble per component
MINI = ElementFamily("MINI", 2, 0, 2, "vector")
BDM1 = ElementFamily("BDM1", 0, 2, 0, "vector")
RT0 = ElementFamily("RT0", 0, 1, 0, "vector")
FAMILIES = {f.name: f for f in (P0, P1, MINI_BUBBLE, MINI, BDM1, RT0)}


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 3) barycentric
    weights: np.ndarray  # (nq,), sum 1/2
    degree: int

    @property
    def xi(self) -> np.ndarray:
        """Reference coordinates, shape (nq, 2)."""
        return self.points[:, 1:]


def _orbit(*bary):
    seen = {}
    for p in itertools.permutations(bary):
        seen.setdefault(tuple(round(c, 12) for c in p), p)
    return [seen[k] for k in sorted(seen)]


def _symmetric_rule(orbits):
    pts, wts = [], []
    for bary, w in orbits:
        bary = (1.0 - bary[1] - bary[2], bary[1], bary[2])
        for p in _orbit(*bary):
            pts.append(p)
            wts.append(w)
    return np.array(pts), 0.5 * np.array(wts)


# Dunavant rules, weights normalised to 1 before the 1/2 area factor
_DUNAVANT = {
    1: [((1 / 3, 1 / 3, 1 / 3), 1.0)],
    2: [((2 / 3, 1 / 6, 1 / 6), 1 / 3)],
    4: [
        ((0.108103018168070, 0.445948490915965, 0.445948490915965), 0.223381589678011),
        ((0.816847572980459, 0.091576213509771, 0.091576213509771), 0.109951743655322),
    ],
    5: [
        ((1 / 3, 1 / 3, 1 / 3), 0.225),
        ((0.059715871789770, 0.470142064105115, 0.470142064105115), 0.132394152788506),
        ((0.797426985353087, 0.101286507323456, 0.101286507323456), 0.125939180544827),
    ],
    6: [
        ((0.501426509658179, 0.249286745170910, 0.249286745170910), 0.116786275726379),
        ((0.873821971016996, 0.063089014491502, 0.063089014491502), 0.050844906370207),
        ((0.053145049844817, 0.310352451033784, 0.636502499121399), 0.082851075618374),
    ],
}


def _collapsed_symmetric(degree: int):
    """Conical product rule averaged over the six vertex permutations."""
    n = (degree + 2) // 2
    u, wu = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (u + 1.0)
    wu = 0.5 * wu
    v, wv = roots_jacobi(n, 1.0, 0.0)
    v = 0.5 * (v + 1.0)
    wv = 0.25 * wv
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv)
    xi = (U * (1.0 - V)).ravel()
    eta = V.ravel()
    w = W.ravel()
    bary = np.column_stack([1.0 - xi - eta, xi, eta])
    pts = np.concatenate([bary[:, list(p)] for p in itertools.permutations(range(3))])
    wts = np.tile(w, 6) / 6.0
    return pts, wts


@lru_cache(maxsize=None)
def quadrature(degree: int) -> QuadratureRule:
    """Symmetric rule on the reference triangle exact for polynomials of total degree ``degree``."""
    if int(degree) != degree or not 1 <= degree <= 10:
        raise ValueError(f"unsupported quadrature degree {degree!r}; expected 1..10")
    degree = int(degree)
    for d in sorted(_DUNAVANT):
        if d >= degree:
            pts, wts = _symmetric_rule(_DUNAVANT[d])
            break
    else:
        pts, wts = _collapsed_symmetric(degree)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, degree)


@lru_cache(maxsize=None)
def edge_quadrature(n: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points/weights on [0, 1]."""
    s, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (s + 1.0), 0.5 * w


def monomial_integral(a: int, b: int, c: int = 0) -> float:
    """Exact ``int l0^c l1^a l2^b`` over the reference triangle (area 1/2)."""
    from math import factorial

    return factorial(a) * factorial(b) * factorial(c) * 2 / factorial(a + b + c + 2) * 0.5


def eval_p1(bary):
    """Values and reference gradients of the three P1 shape functions."""
    bary = np.asarray(bary, dtype=float)
    return bary.copy(), P1_REF_GRADS.copy()


def eval_bubble(bary):
    """Cubic bubble ``27 l0 l1 l2`` and its reference gradient."""
    bary = np.asarray(bary, dtype=float)
    l0, l1, l2 = bary[..., 0], bary[..., 1], bary[..., 2]
    value = 27.0 * l0 * l1 * l2
    grad = 27.0 * (
        (l1 * l2)[..., None] * P1_REF_GRADS[0]
        + (l0 * l2)[..., None] * P1_REF_GRADS[1]
        + (l0 * l1)[..., None] * P1_REF_GRADS[2]
    )
    return value, grad


def affine_maps(cell_vertices: np.ndarray):
    """Jacobian ``J``, ``det J`` and ``J^{-1}`` for cells of shape (nc, 3, 2)."""
    p = np.asarray(cell_vertices, dtype=float)
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(det == 0.0):
        raise ValueError("degenerate cell (zero area)")
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1]
    inv[:, 1, 1] = J[:, 0, 0]
    inv[:, 0, 1] = -J[:, 0, 1]
    inv[:, 1, 0] = -J[:, 1, 0]
    inv /= det[:, None, None]
    return J, det, inv


def _rot(t):
    # clockwise quarter turn: (tx, ty) -> (ty, -tx)
    return np.stack([t[..., 1], -t[..., 0]], axis=-1)


def _hdiv_prebasis(family: ElementFamily, xi: np.ndarray):
    """Prebasis values (npts, nb, 2) and divergences (nb,) in reference coordinates."""
    x, y = xi[..., 0], xi[..., 1]
    one, zero = np.ones_like(x), np.zeros_like(x)
    if family is BDM1:
        vals = [(one, zero), (x, zero), (y, zero), (zero, one), (zero, x), (zero, y)]
        div = np.array([0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
    elif family is RT0:
        vals = [(one, zero), (zero, one), (x, y)]
        div = np.array([0.0, 0.0, 2.0])
    else:
        raise ValueError(f"{family.name} is not an H(div) family")
    arr = np.stack([np.stack(v, axis=-1) for v in vals], axis=-2)
    return arr, div


def edge_moment_weights(family: ElementFamily, s: np.ndarray) -> np.ndarray:
    """Legendre test polynomials on [0,1] used by the edge dof functionals, shape (nmom, ns)."""
    if family is BDM1:
        return np.stack([np.ones_like(s), 2.0 * s - 1.0])
    if family is RT0:
        return np.ones_like(s)[None]
    raise ValueError(f"{family.name} is not an H(div) family")


@lru_cache(maxsize=None)
def _hdiv_coefficients(name: str) -> np.ndarray:
    family = FAMILIES[name]
    s, w = edge_quadrature(3)
    mom = edge_moment_weights(family, s)
    rows = []
    for a, b in LOCAL_EDGES:
        pa, pb = REF_VERTICES[a], REF_VERTICES[b]
        nu = _rot(pb - pa)
        pts = pa + s[:, None] * (pb - pa)
        vals, _ = _hdiv_prebasis(family, pts)
        flux = vals @ nu  # (ns, nb)
        for m in mom:
            rows.append((w * m) @ flux)
    F = np.array(rows)
    return np.linalg.inv(F)  # column i = coefficients of basis i


def hdiv_reference(family: ElementFamily, xi: np.ndarray):
    """Reference basis dual to the local edge moments: values (npts, ndof, 2), divs (ndof,)."""
    C = _hdiv_coefficients(family.name)
    vals, div = _hdiv_prebasis(family, np.asarray(xi, dtype=float))
    return np.einsum("pbk,bi->pik", vals, C), div @ C


def eval_hdiv(family: ElementFamily, cell_vertices, ref_points):
    """Piola-mapped H(div) basis on physical cells.

    Parameters
    ----------
    family : BDM1 or RT0
    cell_vertices : (3, 2) or (nc, 3, 2)
    ref_points : barycentric (npts, 3)

    Returns
    -------
    values : (nc, npts, ndof, 2)
    divs : (nc, ndof), constant on each cell

    Local dof ``2*i + m`` (BDM1) or ``i`` (RT0) is the m-th Legendre moment of
    the flux through local edge ``i`` oriented from its lower to higher local
    vertex, with normal ``rot(b - a)``.
    """
    cv = np.asarray(cell_vertices, dtype=float)
    if cv.ndim == 2:
        cv = cv[None]
    J, det, _ = affine_maps(cv)
    xi = np.asarray(ref_points, dtype=float)[:, 1:]
    ref_vals, ref_div = hdiv_reference(family, xi)
    values = np.einsum("cij,pdj->cpdi", J, ref_vals) / det[:, None, None, None]
    divs = ref_div[None, :] / det[:, None]
    return values, divs
