"""Uniform triangulations of rectangles with periodic edge pairing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError


@dataclass(frozen=True)
class Mesh:
    """Triangulated rectangle ``[ax, bx] x [ay, by]``.

    Interior edges are stored with the element on each side and the unit
    normal pointing from ``interior_elements[:, 0]`` into
    ``interior_elements[:, 1]``. Periodic pairs couple a boundary edge on the
    left/bottom side (first entry) with its translate on the right/top side;
    ``periodic_normals`` is the outward normal of the first edge and
    ``periodic_shifts`` the translation taking the first edge onto the second.
    """

    vertices: np.ndarray            # (nV, 2)
    triangles: np.ndarray           # (nK, 3), counter-clockwise
    interior_elements: np.ndarray   # (nI, 2)
    interior_vertices: np.ndarray   # (nI, 2)
    interior_lengths: np.ndarray    # (nI,)
    interior_normals: np.ndarray    # (nI, 2)
    periodic_elements: np.ndarray   # (nP, 2)
    periodic_vertices: np.ndarray   # (nP, 2, 2): [pair, side, endpoint]
    periodic_lengths: np.ndarray    # (nP,)
    periodic_normals: np.ndarray    # (nP, 2)
    periodic_shifts: np.ndarray     # (nP, 2)
    element_diameters: np.ndarray   # (nK,)
    bounds: tuple

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def n_boundary_edges(self) -> int:
        return 2 * len(self.periodic_elements)

    @property
    def n_edges(self) -> int:
        return len(self.interior_elements) + self.n_boundary_edges

    @property
    def area(self) -> float:
        ax, bx, ay, by = self.bounds
        return (bx - ax) * (by - ay)

    def element_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def periodic_partner(self) -> dict:
        """Map every boundary edge (sorted vertex pair) to its periodic partner."""
        partner = {}
        for pair in self.periodic_vertices:
            e_l = tuple(sorted(pair[0]))
            e_m = tuple(sorted(pair[1]))
            partner[e_l] = e_m
            partner[e_m] = e_l
        return partner


def _normalize_domain(domain):
    domain = tuple(float(x) for x in domain)
    if len(domain) == 2:
        a, b = domain
        return a, b, a, b
    if len(domain) == 4:
        return domain
    raise ConfigError(f"domain must be (a, b) or (ax, bx, ay, by), got {domain!r}")


def build_uniform_mesh(domain, nx: int, ny: int) -> Mesh:
    """Split an ``nx`` by ``ny`` grid of cells into ``2*nx*ny`` triangles.

    Every cell is cut along its bottom-left to top-right diagonal. ``domain``
    is ``(a, b)`` for the square ``[a, b]^2`` or ``(ax, bx, ay, by)``.
    """
    ax, bx, ay, by = _normalize_domain(domain)
    if not (bx > ax and by > ay):
        raise ConfigError(f"empty domain {(ax, bx, ay, by)}")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ConfigError(f"subdivision counts must be positive integers, got {nx}, {ny}")
    nx, ny = int(nx), int(ny)

    xs = np.linspace(ax, bx, nx + 1)
    ys = np.linspace(ay, by, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    I, J = I.ravel(), J.ravel()
    v00, v10, v11, v01 = vid(I, J), vid(I + 1, J), vid(I + 1, J + 1), vid(I, J + 1)
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    # edge -> owning elements
    owners: dict = {}
    for k, tri in enumerate(triangles):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            owners.setdefault((min(a, b), max(a, b)), []).append(k)

    centroids = vertices[triangles].mean(axis=1)
    int_el, int_v, bnd_el, bnd_v = [], [], [], []
    for edge, ks in owners.items():
        if len(ks) == 2:
            int_el.append(ks)
            int_v.append(edge)
        else:
            bnd_el.append(ks[0])
            bnd_v.append(edge)
    int_el = np.asarray(int_el, dtype=np.int64).reshape(-1, 2)
    int_v = np.asarray(int_v, dtype=np.int64).reshape(-1, 2)

    t = vertices[int_v[:, 1]] - vertices[int_v[:, 0]]
    lengths = np.hypot(t[:, 0], t[:, 1])
    normals = np.column_stack([t[:, 1], -t[:, 0]]) / lengths[:, None]
    mid = 0.5 * (vertices[int_v[:, 0]] + vertices[int_v[:, 1]])
    flip = np.einsum("ij,ij->i", normals, mid - centroids[int_el[:, 0]]) < 0
    normals[flip] *= -1.0

    pairs = _pair_periodic_edges(vertices, np.asarray(bnd_v), np.asarray(bnd_el),
                                 (ax, bx, ay, by))

    p = vertices[triangles]
    edge_len = np.stack([np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
                         np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
                         np.linalg.norm(p[:, 0] - p[:, 2], axis=1)], axis=1)

    mesh = Mesh(
        vertices=vertices,
        triangles=triangles,
        interior_elements=int_el,
        interior_vertices=int_v,
        interior_lengths=lengths,
        interior_normals=normals,
        element_diameters=edge_len.max(axis=1),
        bounds=(ax, bx, ay, by),
        **pairs,
    )
    for arr in vars(mesh).values():
        if isinstance(arr, np.ndarray):
            arr.flags.writeable = False
    return mesh


def _pair_periodic_edges(vertices, edges, elements, bounds):
    ax, bx, ay, by = bounds
    tol = 1e-10 * max(bx - ax, by - ay)
    mid = 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])
    on_left = np.abs(mid[:, 0] - ax) < tol
    on_right = np.abs(mid[:, 0] - bx) < tol
    on_bottom = np.abs(mid[:, 1] - ay) < tol
    on_top = np.abs(mid[:, 1] - by) < tol

    out_el, out_v, out_n, out_s = [], [], [], []
    for first, second, shift, normal in (
        (on_left, on_right, np.array([bx - ax, 0.0]), np.array([-1.0, 0.0])),
        (on_bottom, on_top, np.array([0.0, by - ay]), np.array([0.0, -1.0])),
    ):
        idx_l = np.flatnonzero(first)
        idx_m = np.flatnonzero(second)
        if len(idx_l) != len(idx_m):
            raise ConfigError("boundary edges on opposite sides do not match")
        tree = cKDTree(mid[idx_m])
        dist, nearest = tree.query(mid[idx_l] + shift)
        if np.any(dist > tol) or len(set(nearest.tolist())) != len(idx_m):
            raise ConfigError("periodic edge matching failed")
        for il, jm in zip(idx_l, idx_m[nearest]):
            vl = edges[il]
            vm = edges[jm]
            # order the partner endpoints so that vm[i] = vl[i] + shift
            if np.linalg.norm(vertices[vm[0]] - vertices[vl[0]] - shift) > tol:
                vm = vm[::-1]
            out_el.append((elements[il], elements[jm]))
            out_v.append((vl, vm))
            out_n.append(normal)
            out_s.append(shift)

    out_v = np.asarray(out_v, dtype=np.int64).reshape(-1, 2, 2)
    d = vertices[out_v[:, 0, 1]] - vertices[out_v[:, 0, 0]]
    return dict(
        periodic_elements=np.asarray(out_el, dtype=np.int64).reshape(-1, 2),
        periodic_vertices=out_v,
        periodic_lengths=np.hypot(d[:, 0], d[:, 1]),
        periodic_normals=np.asarray(out_n).reshape(-1, 2),
        periodic_shifts=np.asarray(out_s).reshape(-1, 2),
    )
