"""Pure-Python/numpy versions of the compiled matching kernels.

Results are identical to the compiled ones: distances accumulate squared
coordinate differences in index order, and argmin ties go to the lowest
source index.
"""

import numpy as np

BLOCK = 256


def greedy_match(source, target):
    n_s, n_t = source.shape[0], target.shape[0]
    idx = np.empty(n_t, dtype=np.intp)
    best = np.empty(n_t, dtype=np.float64)
    for j0 in range(0, n_t, BLOCK):
        blk = target[j0:j0 + BLOCK]
        acc = np.zeros((blk.shape[0], n_s))
        for k in range(source.shape[1]):
            diff = blk[:, k][:, None] - source[:, k][None, :]
            acc += diff * diff
        am = np.argmin(acc, axis=1)
        idx[j0:j0 + BLOCK] = am
        best[j0:j0 + BLOCK] = acc[np.arange(blk.shape[0]), am]
    return idx, np.sqrt(best)


def hungarian(cost):
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.intp)
    way = np.zeros(n + 1, dtype=np.intp)
    padded = np.zeros((n + 1, n + 1))
    padded[1:, 1:] = cost
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = padded[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col = np.empty(n, dtype=np.intp)
    col[p[1:] - 1] = np.arange(n)
    return col
