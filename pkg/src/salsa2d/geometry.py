"""Planar geometry: point sets, polygons, grid graphs and distance metrics.

Coordinates are projected kilometres throughout. Geodesic ("around the
obstacle") distances are shortest paths on a lattice graph whose excluded
nodes have been removed; see :func:`build_grid_graph` and
:func:`geodesic_distances`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from . import kernels

EUCLIDEAN = "euclidean"
GEODESIC = "geodesic"

# Default node count above which Floyd-Warshall is refused (O(V^3) memory/time).
FLOYD_NODE_CAP = 4000

_ON_EDGE_TOL = 1e-9


class PointSet:
    """A set of planar points (km), optionally with per-point multiplicity."""

    def __init__(self, coords, multiplicity=None):
        coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValueError(f"coords must have shape (n, 2), got {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise ValueError("point coordinates must be finite")
        self.coords = coords
        if multiplicity is None:
            multiplicity = np.ones(len(coords), dtype=np.int64)
        else:
            multiplicity = np.asarray(multiplicity, dtype=np.int64)
            if multiplicity.shape != (len(coords),):
                raise ValueError("multiplicity length must match coords")
            if np.any(multiplicity < 1):
                raise ValueError("multiplicity entries must be >= 1")
        self.multiplicity = multiplicity

    def __len__(self):
        return len(self.coords)

    @property
    def x(self):
        return self.coords[:, 0]

    @property
    def y(self):
        return self.coords[:, 1]

    @classmethod
    def from_xy(cls, x, y):
        return cls(np.column_stack([np.asarray(x, float), np.asarray(y, float)]))

    def deduplicated(self):
        """Unique locations, multiplicities summed; first-seen order."""
        _, first, inverse = np.unique(
            self.coords, axis=0, return_index=True, return_inverse=True
        )
        order = np.argsort(first)
        rank = np.empty(len(order), dtype=np.int64)
        rank[order] = np.arange(len(order))
        mult = np.zeros(len(order), dtype=np.int64)
        np.add.at(mult, rank[inverse], self.multiplicity)
        return PointSet(self.coords[np.sort(first)], mult)


def _close_ring(ring):
    ring = np.asarray(ring, dtype=np.float64)
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise ValueError("polygon ring must have shape (m, 2)")
    if not np.allclose(ring[0], ring[-1]):
        ring = np.vstack([ring, ring[0]])
    return ring


def _ring_area(ring):
    x, y = ring[:-1, 0], ring[:-1, 1]
    xn, yn = ring[1:, 0], ring[1:, 1]
    return 0.5 * np.sum(x * yn - xn * y)


class Polygon:
    """Closed outer boundary with optional holes.

    Rings are normalized so the first vertex equals the last. A ring with
    fewer than 3 distinct vertices, or with zero area (collinear), is
    rejected.
    """

    def __init__(self, outer, holes=()):
        self.rings = [_close_ring(outer)] + [_close_ring(h) for h in holes]
        for ring in self.rings:
            distinct = np.unique(ring[:-1], axis=0)
            if len(distinct) < 3:
                raise ValueError("polygon ring needs at least 3 distinct vertices")
            if abs(_ring_area(ring)) < 1e-12:
                raise ValueError("degenerate (collinear) polygon ring")

    @property
    def outer(self):
        return self.rings[0]

    @property
    def holes(self):
        return self.rings[1:]

    def area(self):
        """Outer-ring area minus hole areas (km^2)."""
        total = abs(_ring_area(self.outer))
        for h in self.holes:
            total -= abs(_ring_area(h))
        return total

    def bounds(self):
        outer = self.outer
        return (
            outer[:, 0].min(),
            outer[:, 1].min(),
            outer[:, 0].max(),
            outer[:, 1].max(),
        )


def point_in_polygon(p, poly):
    """Even-odd containment test; points on any ring edge count as inside."""
    return bool(points_in_polygon(np.asarray(p, float).reshape(1, 2), poly)[0])


def points_in_polygon(coords, poly):
    """Vectorized even-odd test over all rings (holes flip parity).

    On-edge points are classified inside, matching the treatment of
    observations that sit exactly on a boundary.
    """
    coords = np.asarray(coords, dtype=np.float64)
    px, py = coords[:, 0], coords[:, 1]
    inside = np.zeros(len(coords), dtype=bool)
    on_edge = np.zeros(len(coords), dtype=bool)
    for ring in poly.rings:
        x1, y1 = ring[:-1, 0], ring[:-1, 1]
        x2, y2 = ring[1:, 0], ring[1:, 1]
        for e in range(len(x1)):
            crossing = (y1[e] > py) != (y2[e] > py)
            if crossing.any():
                # y2 != y1 wherever crossing holds, so the division is safe
                xcross = x1[e] + (py - y1[e]) * (x2[e] - x1[e]) / (y2[e] - y1[e])
                inside ^= crossing & (px < xcross)
            dx, dy = x2[e] - x1[e], y2[e] - y1[e]
            seg2 = dx * dx + dy * dy
            if seg2 == 0.0:
                continue
            t = np.clip(((px - x1[e]) * dx + (py - y1[e]) * dy) / seg2, 0.0, 1.0)
            d2 = (px - (x1[e] + t * dx)) ** 2 + (py - (y1[e] + t * dy)) ** 2
            on_edge |= d2 <= _ON_EDGE_TOL * _ON_EDGE_TOL
    return inside | on_edge


def contains(polys, coords):
    """Membership in a polygon or any of a sequence of polygons."""
    if isinstance(polys, Polygon):
        polys = [polys]
    result = np.zeros(len(coords), dtype=bool)
    for poly in polys:
        result |= points_in_polygon(coords, poly)
    return result


@dataclass
class DistanceMatrix:
    """Dense point-to-point distances (km) with a metric tag.

    Geodesic matrices may contain ``inf`` for unreachable pairs.
    """

    values: np.ndarray
    metric: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("distance matrix must be 2-D")
        if self.metric not in (EUCLIDEAN, GEODESIC):
            raise ValueError(f"unknown metric tag {self.metric!r}")
        finite = self.values[np.isfinite(self.values)]
        if finite.size and finite.min() < 0:
            raise ValueError("distances must be non-negative")

    @property
    def shape(self):
        return self.values.shape


def euclidean_distances(a, b):
    """Pairwise Euclidean distances between two point sets."""
    a = a.coords if isinstance(a, PointSet) else np.asarray(a, float)
    b = b.coords if isinstance(b, PointSet) else np.asarray(b, float)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("point sets must be nonempty")
    return DistanceMatrix(cdist(a, b), EUCLIDEAN)


@dataclass
class GridGraph:
    """Undirected lattice graph in CSR form, plus attached off-lattice nodes.

    The first ``n_grid`` nodes are retained lattice points; any extra nodes
    (presences, knot candidates) follow, each connected to its nearest
    retained lattice nodes by Euclidean-length edges.
    """

    coords: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    n_grid: int
    spacing: float

    @property
    def n_nodes(self):
        return len(self.coords)

    @property
    def n_edges(self):
        # adjacency stores both directions
        return len(self.indices) // 2

    def node_index_of(self, coords, tol=1e-8):
        """Match query points to graph nodes (within ``tol`` km)."""
        coords = coords.coords if isinstance(coords, PointSet) else np.asarray(coords, float)
        d = cdist(coords, self.coords)
        nearest = d.argmin(axis=1)
        bad = d[np.arange(len(coords)), nearest] > tol
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(
                f"point ({coords[i, 0]:g}, {coords[i, 1]:g}) is not a graph node; "
                "pass it via extra_nodes when building the grid graph"
            )
        return nearest.astype(np.int32)


_OFFSETS_4 = ((1, 0), (0, 1))
_OFFSETS_8 = ((1, 0), (0, 1), (1, 1), (1, -1))


def build_grid_graph(grid, exclusion=None, connectivity=8, extra_nodes=None,
                     attach_k=4, spacing=None):
    """Build the lattice graph used for geodesic distances.

    Nodes inside the exclusion polygon(s) are removed before edges are laid
    down, so no edge touches an excluded node. ``extra_nodes`` are attached
    to their ``attach_k`` nearest retained lattice nodes with
    Euclidean-length edges.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    coords = grid.coords if isinstance(grid, PointSet) else np.asarray(grid, float)
    if len(coords) == 0:
        raise ValueError("empty grid")
    if spacing is None:
        spacing = _infer_spacing(coords)
    x0, y0 = coords[:, 0].min(), coords[:, 1].min()
    ij = np.round((coords - (x0, y0)) / spacing).astype(np.int64)
    if not np.allclose(coords, (x0, y0) + ij * spacing, atol=1e-6 * spacing):
        raise ValueError("grid points do not lie on a regular lattice")

    keep = np.ones(len(coords), dtype=bool)
    if exclusion is not None:
        keep &= ~contains(exclusion, coords)
    kept_coords = coords[keep]
    kept_ij = ij[keep]
    n_grid = len(kept_coords)

    node_of = {(int(i), int(j)): k for k, (i, j) in enumerate(kept_ij)}

    offsets = _OFFSETS_4 if connectivity == 4 else _OFFSETS_8
    edges_u, edges_v, edges_w = [], [], []
    diag = spacing * math.sqrt(2.0)
    for k, (i, j) in enumerate(kept_ij):
        for di, dj in offsets:
            other = node_of.get((int(i) + di, int(j) + dj))
            if other is not None:
                w = spacing if (di == 0 or dj == 0) else diag
                edges_u.append(k)
                edges_v.append(other)
                edges_w.append(w)

    all_coords = kept_coords
    if extra_nodes is not None and len(extra_nodes) > 0:
        ex = extra_nodes.coords if isinstance(extra_nodes, PointSet) else np.asarray(extra_nodes, float)
        if n_grid == 0:
            raise ValueError(
                f"extra node ({ex[0, 0]:g}, {ex[0, 1]:g}) has no reachable grid node"
            )
        d = cdist(ex, kept_coords)
        k_eff = min(attach_k, n_grid)
        for m in range(len(ex)):
            node_id = n_grid + m
            nearest = np.argsort(d[m], kind="stable")[:k_eff]
            for t in nearest:
                edges_u.append(node_id)
                edges_v.append(int(t))
                edges_w.append(float(d[m, t]))
        all_coords = np.vstack([kept_coords, ex])

    n = len(all_coords)
    if n == 0:
        raise ValueError("all grid nodes excluded")
    u = np.asarray(edges_u + edges_v, dtype=np.int32)
    v = np.asarray(edges_v + edges_u, dtype=np.int32)
    w = np.asarray(edges_w + edges_w, dtype=np.float64)
    order = np.lexsort((v, u))
    u, v, w = u[order], v[order], w[order]
    indptr = np.zeros(n + 1, dtype=np.int32)
    np.add.at(indptr, u + 1, 1)
    indptr = np.cumsum(indptr, dtype=np.int32)
    return GridGraph(all_coords, indptr, v, w, n_grid, float(spacing))


def _infer_spacing(coords):
    spacings = []
    for axis in (0, 1):
        vals = np.unique(coords[:, axis])
        if len(vals) > 1:
            diffs = np.diff(vals)
            spacings.append(diffs[diffs > 1e-9].min())
    if not spacings:
        raise ValueError("cannot infer grid spacing from a degenerate grid")
    return float(min(spacings))


def geodesic_distances(graph, sources, targets, algorithm="dijkstra",
                       floyd_node_cap=FLOYD_NODE_CAP):
    """Shortest-path distances between graph nodes.

    ``algorithm='floyd'`` computes all pairs at once and is refused above
    ``floyd_node_cap`` nodes; per-source Dijkstra gives identical results
    and scales to large lattices. Unreachable pairs come back as ``inf``
    with a warning.
    """
    src_ids = graph.node_index_of(sources)
    tgt_ids = graph.node_index_of(targets)
    if algorithm == "floyd":
        if graph.n_nodes > floyd_node_cap:
            raise ValueError(
                f"floyd algorithm refused on {graph.n_nodes} nodes "
                f"(cap {floyd_node_cap}); use algorithm='dijkstra'"
            )
        dense = np.full((graph.n_nodes, graph.n_nodes), np.inf)
        np.fill_diagonal(dense, 0.0)
        for u in range(graph.n_nodes):
            lo, hi = graph.indptr[u], graph.indptr[u + 1]
            cols = graph.indices[lo:hi]
            np.minimum.at(dense[u], cols, graph.weights[lo:hi])
        kernels.floyd_warshall(dense)
        values = dense[np.ix_(src_ids, tgt_ids)]
    elif algorithm == "dijkstra":
        full = kernels.dijkstra_csr_many(graph.indptr, graph.indices,
                                         graph.weights, src_ids)
        values = full[:, tgt_ids]
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    n_unreachable = int(np.isinf(values).sum())
    if n_unreachable:
        warnings.warn(
            f"{n_unreachable} source/target pairs are unreachable; "
            "their distance is +inf",
            stacklevel=2,
        )
    return DistanceMatrix(values, GEODESIC)


@dataclass
class FeatureSet:
    """Map features: isolated points and/or polylines (vertex sequences)."""

    points: np.ndarray | None = None
    polylines: list = field(default_factory=list)

    def __post_init__(self):
        if self.points is not None:
            self.points = np.atleast_2d(np.asarray(self.points, float))
        self.polylines = [np.asarray(line, float) for line in self.polylines]
        for line in self.polylines:
            if line.ndim != 2 or line.shape[1] != 2 or len(line) < 2:
                raise ValueError("polyline needs shape (k, 2) with k >= 2")

    def is_empty(self):
        have_pts = self.points is not None and len(self.points) > 0
        return not have_pts and not self.polylines


def _point_segment_distance(pts, a, b):
    ab = b - a
    seg2 = float(ab @ ab)
    if seg2 == 0.0:
        return np.hypot(pts[:, 0] - a[0], pts[:, 1] - a[1])
    t = np.clip(((pts - a) @ ab) / seg2, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.hypot(pts[:, 0] - proj[:, 0], pts[:, 1] - proj[:, 1])


def distance_to_nearest_feature(points, features):
    """Per-point Euclidean distance (km) to the closest feature."""
    pts = points.coords if isinstance(points, PointSet) else np.asarray(points, float)
    if features.is_empty():
        raise ValueError("feature set is empty")
    best = np.full(len(pts), np.inf)
    if features.points is not None and len(features.points) > 0:
        best = cdist(pts, features.points).min(axis=1)
    for line in features.polylines:
        for s in range(len(line) - 1):
            np.minimum(best, _point_segment_distance(pts, line[s], line[s + 1]),
                       out=best)
    return best
