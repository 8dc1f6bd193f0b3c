"""Pure-Python reference kernels; used when the compiled extension is unavailable."""

from collections import deque

import numpy as np


def dtw_accumulate(cost):
    """Minimal-cost monotone alignment over a pairwise cost matrix.

    Among cost-optimal paths the longest one is kept. Returns
    ``(total_cost, path_length)``.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    acc = [[0.0] * m for _ in range(n)]
    length = [[0] * m for _ in range(n)]
    c = cost.tolist()
    for i in range(n):
        row_c = c[i]
        for j in range(m):
            if i == 0 and j == 0:
                acc[0][0] = row_c[0]
                length[0][0] = 1
                continue
            best = None
            best_len = 0
            for pi, pj in ((i - 1, j - 1), (i - 1, j), (i, j - 1)):
                if pi < 0 or pj < 0:
                    continue
                a = acc[pi][pj]
                ln = length[pi][pj]
                if best is None or a < best or (a == best and ln > best_len):
                    best = a
                    best_len = ln
            acc[i][j] = row_c[j] + best
            length[i][j] = best_len + 1
    return acc[n - 1][m - 1], length[n - 1][m - 1]


def bfs_distances(indptr, indices, source, blocked=None):
    """Hop distances to every vertex from ``source`` over a CSR adjacency (-1 = unreachable)."""
    n = len(indptr) - 1
    dist = np.full(n, -1, dtype=np.int64)
    if blocked is not None and blocked[source]:
        return dist
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        du = dist[u] + 1
        for k in range(indptr[u], indptr[u + 1]):
            v = indices[k]
            if dist[v] < 0 and (blocked is None or not blocked[v]):
                dist[v] = du
                queue.append(v)
    return dist
