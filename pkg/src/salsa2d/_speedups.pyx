# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled shortest-path kernels: binary-heap Dijkstra and Floyd-Warshall.

Drop-in replacements for :mod:`salsa2d._speedups_py`; selected at import
time by :mod:`salsa2d.kernels`.
"""

from libc.math cimport INFINITY

import numpy as np

BACKEND_NAME = "compiled"


cdef inline void _heap_push(double[::1] heap_d, int[::1] heap_v, int* n,
                            double d, int v) noexcept nogil:
    cdef int i = n[0]
    cdef int parent
    heap_d[i] = d
    heap_v[i] = v
    n[0] += 1
    while i > 0:
        parent = (i - 1) >> 1
        if heap_d[parent] <= heap_d[i]:
            break
        heap_d[i], heap_d[parent] = heap_d[parent], heap_d[i]
        heap_v[i], heap_v[parent] = heap_v[parent], heap_v[i]
        i = parent


cdef inline int _heap_pop(double[::1] heap_d, int[::1] heap_v, int* n,
                          double* d_out) noexcept nogil:
    cdef int v = heap_v[0]
    cdef int i = 0
    cdef int child
    d_out[0] = heap_d[0]
    n[0] -= 1
    heap_d[0] = heap_d[n[0]]
    heap_v[0] = heap_v[n[0]]
    while True:
        child = 2 * i + 1
        if child >= n[0]:
            break
        if child + 1 < n[0] and heap_d[child + 1] < heap_d[child]:
            child += 1
        if heap_d[i] <= heap_d[child]:
            break
        heap_d[i], heap_d[child] = heap_d[child], heap_d[i]
        heap_v[i], heap_v[child] = heap_v[child], heap_v[i]
        i = child
    return v


cdef void _dijkstra_one(int[::1] indptr, int[::1] indices, double[::1] weights,
                        int source, double[:] dist, unsigned char[::1] done,
                        double[::1] heap_d, int[::1] heap_v) noexcept nogil:
    cdef int n = indptr.shape[0] - 1
    cdef int heap_n = 0
    cdef int u, e, v, i
    cdef double d, nd
    for i in range(n):
        dist[i] = INFINITY
        done[i] = 0
    dist[source] = 0.0
    _heap_push(heap_d, heap_v, &heap_n, 0.0, source)
    while heap_n > 0:
        u = _heap_pop(heap_d, heap_v, &heap_n, &d)
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
                _heap_push(heap_d, heap_v, &heap_n, nd, v)


def dijkstra_csr_many(indptr, indices, weights, sources):
    """Shortest-path distances from each source node to every node.

    Graph is given in CSR form (symmetric adjacency expected but not
    required). Returns an array of shape (len(sources), n_nodes) with
    ``inf`` for unreachable nodes.
    """
    cdef int[::1] indptr_v = np.ascontiguousarray(indptr, dtype=np.int32)
    cdef int[::1] indices_v = np.ascontiguousarray(indices, dtype=np.int32)
    cdef double[::1] weights_v = np.ascontiguousarray(weights, dtype=np.float64)
    cdef int[::1] sources_v = np.ascontiguousarray(sources, dtype=np.int32)
    cdef int n = indptr_v.shape[0] - 1
    cdef int ns = sources_v.shape[0]
    out = np.empty((ns, n), dtype=np.float64)
    cdef double[:, ::1] out_v = out
    # lazy-deletion heap: at most one push per improving edge relaxation
    cdef int cap = indices_v.shape[0] + n + 1
    done_arr = np.zeros(n, dtype=np.uint8)
    heap_d_arr = np.empty(cap, dtype=np.float64)
    heap_v_arr = np.empty(cap, dtype=np.int32)
    cdef unsigned char[::1] done = done_arr
    cdef double[::1] heap_d = heap_d_arr
    cdef int[::1] heap_v = heap_v_arr
    cdef int i
    with nogil:
        for i in range(ns):
            _dijkstra_one(indptr_v, indices_v, weights_v, sources_v[i],
                          out_v[i], done, heap_d, heap_v)
    return out


def floyd_warshall(dist):
    """All-pairs shortest paths, in place, on a dense float64 matrix.

    ``dist`` must hold direct edge weights, ``inf`` where no edge exists
    and 0 on the diagonal.
    """
    cdef double[:, ::1] d = dist
    cdef int n = d.shape[0]
    cdef int i, j, k
    cdef double dik
    with nogil:
        for k in range(n):
            for i in range(n):
                dik = d[i, k]
                if dik == INFINITY:
                    continue
                for j in range(n):
                    if dik + d[k, j] < d[i, j]:
                        d[i, j] = dik + d[k, j]
    return dist
