"""Structured triangulations of the two-box channel (porous box below, fluid box above).

The porous and fluid triangulations match along the shared horizontal
interface, so every interface edge is shared by exactly one fluid triangle
and one porous triangle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FLUID = 0
POROUS = 1
SUBDOMAINS = {"fluid": FLUID, "porous": POROUS}

# edge tags
INTERIOR = 0
INTERFACE = 1
LEFT = 2
RIGHT = 3
BOTTOM = 4
TOP = 5
EDGE_TAGS = {
    "interior": INTERIOR,
    "interface": INTERFACE,
    "left": LEFT,
    "right": RIGHT,
    "bottom": BOTTOM,
    "top": TOP,
}


@dataclass(frozen=True)
class ChannelGeometry:
    """Rectangle ``x_range x (y_range_p U y_range_f)`` split at ``interface_y``."""

    x_range: tuple[float, float] = (0.0, 1.0)
    y_range_p: tuple[float, float] = (0.0, 1.0)
    y_range_f: tuple[float, float] = (1.0, 2.0)

    @property
    def interface_y(self) -> float:
        return self.y_range_p[1]

    def validate(self) -> None:
        for name in ("x_range", "y_range_p", "y_range_f"):
            lo, hi = getattr(self, name)
            if not hi > lo:
                raise ValueError(f"degenerate geometry: {name}={(lo, hi)}")
        if self.y_range_p[1] != self.y_range_f[0]:
            raise ValueError("porous and fluid boxes must share the interface line")


def _topology(triangles: np.ndarray, n_vertices: int):
    """Unique edges (sorted low -> high), triangle->edge and edge->triangle maps.

    Local edge ``i`` of a triangle is the edge opposite its local vertex ``i``.
    """
    t = triangles
    local = np.array([[1, 2], [0, 2], [0, 1]])
    pairs = np.sort(t[:, local], axis=2).reshape(-1, 2)
    keys = pairs[:, 0].astype(np.int64) * n_vertices + pairs[:, 1]
    uniq, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    edges = pairs[first]
    tri_edges = inverse.reshape(-1, 3)

    edge_tris = -np.ones((len(edges), 2), dtype=np.int64)
    owner = np.repeat(np.arange(len(t)), 3)
    flat = tri_edges.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_edges = flat[order]
    starts = np.searchsorted(sorted_edges, np.arange(len(edges)))
    counts = np.bincount(flat, minlength=len(edges))
    if counts.max() > 2:
        raise ValueError("non-manifold triangulation")
    edge_tris[:, 0] = owner[order[starts]]
    two = counts == 2
    edge_tris[two, 1] = owner[order[starts[two] + 1]]
    return edges, tri_edges, edge_tris


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation with subdomain and edge tags.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counter-clockwise
    tri_tag : (nt,) int array, ``FLUID`` or ``POROUS``
    edges : (ne, 2) int array, vertex indices sorted low -> high
    edge_tag : (ne,) int array, one of the ``EDGE_TAGS`` codes
    tri_edges : (nt, 3) edge index opposite each local vertex
    edge_tris : (ne, 2) incident triangles, ``-1`` padded
    h_grid : grid spacing ``(x length) / nx``
    h_max : largest element diameter
    """

    vertices: np.ndarray
    triangles: np.ndarray
    tri_tag: np.ndarray
    edges: np.ndarray
    edge_tag: np.ndarray
    tri_edges: np.ndarray
    edge_tris: np.ndarray
    h_grid: float
    h_max: float
    geometry: ChannelGeometry = field(default_factory=ChannelGeometry)
    shape: tuple[int, int, int] = (1, 1, 1)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edge_lengths(self) -> np.ndarray:
        p = self.vertices[self.edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    def submesh(self, subdomain: str) -> "SubMesh":
        return SubMesh.from_mesh(self, subdomain)

    def dump(self, path) -> None:
        """Write a plain-text listing: ``x y`` per vertex, then ``v0 v1 v2 tag`` per triangle."""
        names = {FLUID: "fluid", POROUS: "porous"}
        with open(path, "w") as fh:
            fh.write(f"{self.n_vertices} {len(self.triangles)}\n")
            for x, y in self.vertices:
                fh.write(f"{float(x)!r} {float(y)!r}\n")
            for (a, b, c), tag in zip(self.triangles, self.tri_tag):
                fh.write(f"{a} {b} {c} {names[int(tag)]}\n")


def build_channel_mesh(geom: ChannelGeometry, nx: int, ny_f: int, ny_p: int) -> Mesh:
    """Uniform right-triangle mesh of the channel.

    Each grid cell is cut along its lower-left to upper-right diagonal.
    Rows ``0..ny_p`` of vertices cover the porous box; the interface row is
    shared with the fluid box above.
    """
    geom.validate()
    for name, n in (("nx", nx), ("ny_f", ny_f), ("ny_p", ny_p)):
        if int(n) != n or n < 1:
            raise ValueError(f"{name} must be a positive integer, got {n!r}")
    x0, x1 = geom.x_range
    yp0, yi = geom.y_range_p
    yf1 = geom.y_range_f[1]

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.concatenate([np.linspace(yp0, yi, ny_p + 1), np.linspace(yi, yf1, ny_f + 1)[1:]])
    # exact endpoints, no linspace drift on the interface row
    ys[ny_p] = yi
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    ny = ny_p + ny_f
    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    v00 = (jj * (nx + 1) + ii).ravel()
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    cell_row = np.repeat(jj.ravel(), 2)
    tri_tag = np.where(cell_row >= ny_p, FLUID, POROUS).astype(np.int64)

    edges, tri_edges, edge_tris = _topology(triangles, len(vertices))

    ev = vertices[edges]
    tag = np.full(len(edges), INTERIOR, dtype=np.int64)
    horizontal = ev[:, 0, 1] == ev[:, 1, 1]
    vertical = ev[:, 0, 0] == ev[:, 1, 0]
    tag[vertical & (ev[:, 0, 0] == x0)] = LEFT
    tag[vertical & (ev[:, 0, 0] == x1)] = RIGHT
    tag[horizontal & (ev[:, 0, 1] == yp0)] = BOTTOM
    tag[horizontal & (ev[:, 0, 1] == yf1)] = TOP
    tag[horizontal & (ev[:, 0, 1] == yi)] = INTERFACE

    dx = (x1 - x0) / nx
    dy = max((yi - yp0) / ny_p, (yf1 - yi) / ny_f)
    return Mesh(
        vertices=vertices,
        triangles=triangles,
        tri_tag=tri_tag,
        edges=edges,
        edge_tag=tag,
        tri_edges=tri_edges,
        edge_tris=edge_tris,
        h_grid=dx,
        h_max=float(np.hypot(dx, dy)),
        geometry=geom,
        shape=(nx, ny_f, ny_p),
    )


def unit_channel_mesh(n: int) -> Mesh:
    """The ``(0,1) x (0,2)`` channel with ``n`` cells per unit length in each direction."""
    return build_channel_mesh(ChannelGeometry(), n, n, n)


def interface_edges(mesh: Mesh) -> list[tuple[int, int, int, float]]:
    """``(edge, fluid_triangle, porous_triangle, length)`` for every interface edge, ordered by x."""
    ids = np.flatnonzero(mesh.edge_tag == INTERFACE)
    xmid = mesh.vertices[mesh.edges[ids]].mean(axis=1)[:, 0]
    ids = ids[np.argsort(xmid, kind="stable")]
    lengths = mesh.edge_lengths()
    out = []
    for e in ids:
        t0, t1 = mesh.edge_tris[e]
        if mesh.tri_tag[t0] == FLUID:
            tf, tp = t0, t1
        else:
            tf, tp = t1, t0
        out.append((int(e), int(tf), int(tp), float(lengths[e])))
    return out


@dataclass(frozen=True)
class SubMesh:
    """One subdomain re-numbered locally; local vertex order follows global order.

    ``edge_tag`` keeps the parent tags, so interface edges are boundary edges
    of the submesh tagged ``INTERFACE``.
    """

    name: str
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_tag: np.ndarray
    tri_edges: np.ndarray
    edge_tris: np.ndarray
    vertex_global: np.ndarray
    tri_global: np.ndarray
    h_grid: float

    @classmethod
    def from_mesh(cls, mesh: Mesh, subdomain: str) -> "SubMesh":
        code = SUBDOMAINS[subdomain]
        tri_global = np.flatnonzero(mesh.tri_tag == code)
        tris = mesh.triangles[tri_global]
        vertex_global = np.unique(tris)
        g2l = -np.ones(mesh.n_vertices, dtype=np.int64)
        g2l[vertex_global] = np.arange(len(vertex_global))
        local_tris = g2l[tris]
        edges, tri_edges, edge_tris = _topology(local_tris, len(vertex_global))
        # carry parent tags over through the global edge of each local edge
        parent_edges = mesh.tri_edges[tri_global]
        edge_tag = np.empty(len(edges), dtype=np.int64)
        edge_tag[tri_edges.ravel()] = mesh.edge_tag[parent_edges.ravel()]
        return cls(
            name=subdomain,
            vertices=mesh.vertices[vertex_global],
            triangles=local_tris,
            edges=edges,
            edge_tag=edge_tag,
            tri_edges=tri_edges,
            edge_tris=edge_tris,
            vertex_global=vertex_global,
            tri_global=tri_global,
            h_grid=mesh.h_grid,
        )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def boundary_edges(self, tags) -> np.ndarray:
        codes = [EDGE_TAGS[t] if isinstance(t, str) else int(t) for t in tags]
        for t in tags:
            if isinstance(t, str) and t not in EDGE_TAGS:
                raise KeyError(f"unknown boundary tag {t!r}")
        return np.flatnonzero(np.isin(self.edge_tag, codes) & (self.edge_tag != INTERIOR))

    def boundary_vertices(self, tags) -> np.ndarray:
        return np.unique(self.edges[self.boundary_edges(tags)])

    def exterior_tags(self) -> tuple[str, ...]:
        present = set(np.unique(self.edge_tag).tolist()) - {INTERIOR, INTERFACE}
        return tuple(name for name, code in EDGE_TAGS.items() if code in present)
