"""Pure-Python shortest-path kernels (fallback for the compiled extension).

Same call signatures and bit-identical results as :mod:`salsa2d._speedups`:
the Floyd-Warshall k-passes apply the identical sequence of ``min(d_ij,
d_ik + d_kj)`` updates, and Dijkstra path sums accumulate edge weights in
the same order.
"""

import heapq
import math

import numpy as np

BACKEND_NAME = "python"


def _dijkstra_one(indptr, indices, weights, source, n):
    dist = [math.inf] * n
    dist[source] = 0.0
    done = bytearray(n)
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = 1
        for e in range(indptr[u], indptr[u + 1]):
            v = indices[e]
            if done[v]:
                continue
            nd = d + weights[e]
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def dijkstra_csr_many(indptr, indices, weights, sources):
    """Shortest-path distances from each source node to every node."""
    indptr = np.ascontiguousarray(indptr, dtype=np.int32).tolist()
    indices = np.ascontiguousarray(indices, dtype=np.int32).tolist()
    weights = np.ascontiguousarray(weights, dtype=np.float64).tolist()
    sources = np.ascontiguousarray(sources, dtype=np.int32)
    n = len(indptr) - 1
    out = np.empty((len(sources), n), dtype=np.float64)
    for i, s in enumerate(sources):
        out[i] = _dijkstra_one(indptr, indices, weights, int(s), n)
    return out


def floyd_warshall(dist):
    """All-pairs shortest paths, in place, on a dense float64 matrix."""
    n = dist.shape[0]
    for k in range(n):
        # in-place per k is safe: row/column k are fixed points of pass k
        np.minimum(dist, dist[:, k : k + 1] + dist[k : k + 1, :], out=dist)
    return dist
