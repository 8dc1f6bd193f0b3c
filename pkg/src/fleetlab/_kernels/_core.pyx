# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: DTW accumulation and BFS distance fields."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def dtw_accumulate(cost):
    cdef double[:, ::1] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0], m = c.shape[1], i, j
    acc_arr = np.empty((n, m), dtype=np.float64)
    len_arr = np.empty((n, m), dtype=np.int64)
    cdef double[:, ::1] acc = acc_arr
    cdef long long[:, ::1] ln = len_arr
    cdef double best, a
    cdef long long best_len, l
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                acc[0, 0] = c[0, 0]
                ln[0, 0] = 1
                continue
            best_len = -1
            best = 0.0
            if i > 0 and j > 0:
                best = acc[i - 1, j - 1]
                best_len = ln[i - 1, j - 1]
            if i > 0:
                a = acc[i - 1, j]
                l = ln[i - 1, j]
                if best_len < 0 or a < best or (a == best and l > best_len):
                    best = a
                    best_len = l
            if j > 0:
                a = acc[i, j - 1]
                l = ln[i, j - 1]
                if best_len < 0 or a < best or (a == best and l > best_len):
                    best = a
                    best_len = l
            acc[i, j] = c[i, j] + best
            ln[i, j] = best_len + 1
    return float(acc[n - 1, m - 1]), int(ln[n - 1, m - 1])


def bfs_distances(indptr, indices, Py_ssize_t source, blocked=None):
    cdef long long[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef long long[::1] ix = np.ascontiguousarray(indices, dtype=np.int64)
    cdef Py_ssize_t n = ip.shape[0] - 1
    dist_arr = np.full(n, -1, dtype=np.int64)
    cdef long long[::1] dist = dist_arr
    cdef unsigned char[::1] blk
    cdef bint use_blk = blocked is not None
    if use_blk:
        blk = np.ascontiguousarray(blocked, dtype=np.uint8)
        if blk[source]:
            return dist_arr
    queue_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] queue = queue_arr
    cdef Py_ssize_t head = 0, tail = 0, k, u, v
    dist[source] = 0
    queue[tail] = source
    tail += 1
    while head < tail:
        u = queue[head]
        head += 1
        for k in range(ip[u], ip[u + 1]):
            v = ix[k]
            if dist[v] < 0 and (not use_blk or not blk[v]):
                dist[v] = dist[u] + 1
                queue[tail] = v
                tail += 1
    return dist_arr
