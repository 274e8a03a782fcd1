# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled matching kernels. Arithmetic order matches the pure-Python
fallback exactly: squared differences summed over coordinates in index order."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, sqrt

cnp.import_array()


cdef extern from *:
    """
    #include <string.h>

    /* out[i] = sum_k (t[k] - st[k, i])^2, summed over k in index order.
       Sixteen sources per pass, held in four 4-lane accumulators; each lane
       performs exactly the scalar sequence of operations. */
    typedef double osdr_v4 __attribute__((vector_size(32), aligned(8)));

    __attribute__((target_clones("avx2", "default")))
    static void osdr_sq_dists(double *restrict out, const double *restrict st,
                              Py_ssize_t ns, Py_ssize_t d, const double *restrict t) {
        Py_ssize_t i = 0, k;
        for (; i + 16 <= ns; i += 16) {
            osdr_v4 a0 = {0}, a1 = {0}, a2 = {0}, a3 = {0};
            for (k = 0; k < d; k++) {
                const double *c = st + k * ns + i;
                osdr_v4 tv = {t[k], t[k], t[k], t[k]};
                osdr_v4 c0, c1, c2, c3;
                memcpy(&c0, c, 32);
                memcpy(&c1, c + 4, 32);
                memcpy(&c2, c + 8, 32);
                memcpy(&c3, c + 12, 32);
                osdr_v4 d0 = tv - c0, d1 = tv - c1, d2 = tv - c2, d3 = tv - c3;
                a0 = a0 + d0 * d0;
                a1 = a1 + d1 * d1;
                a2 = a2 + d2 * d2;
                a3 = a3 + d3 * d3;
            }
            memcpy(out + i, &a0, 32);
            memcpy(out + i + 4, &a1, 32);
            memcpy(out + i + 8, &a2, 32);
            memcpy(out + i + 12, &a3, 32);
        }
        for (; i < ns; i++) {
            double acc = 0.0;
            for (k = 0; k < d; k++) {
                double diff = t[k] - st[k * ns + i];
                acc = acc + diff * diff;
            }
            out[i] = acc;
        }
    }
    """
    void osdr_sq_dists(double* out, const double* st, Py_ssize_t ns, Py_ssize_t d,
                       const double* t) nogil




def greedy_match(const double[:, ::1] source, const double[:, ::1] target):
    """For every target row, the index of the nearest source row and the distance."""
    cdef Py_ssize_t n_s = source.shape[0], n_t = target.shape[0], d = source.shape[1]
    cdef Py_ssize_t j, i
    # coordinate-major copy so that neighbouring sources sit side by side
    st_arr = np.ascontiguousarray(np.asarray(source).T)
    dist_arr = np.empty(n_s, dtype=np.float64)
    idx_arr = np.zeros(n_t, dtype=np.intp)
    best_arr = np.full(n_t, INFINITY, dtype=np.float64)
    cdef double[:, ::1] st = st_arr
    cdef double[::1] dist = dist_arr
    cdef Py_ssize_t[::1] idx = idx_arr
    cdef double[::1] best = best_arr
    if n_s == 0 or n_t == 0 or d == 0:
        return _greedy_degenerate(n_s, n_t)
    with nogil:
        for j in range(n_t):
            osdr_sq_dists(&dist[0], &st[0, 0], n_s, d, &target[j, 0])
            for i in range(n_s):
                if dist[i] < best[j]:
                    best[j] = dist[i]
                    idx[j] = i
            best[j] = sqrt(best[j])
    return idx_arr, best_arr


def _greedy_degenerate(n_s, n_t):
    if n_s == 0:
        return np.zeros(n_t, dtype=np.intp), np.full(n_t, INFINITY)
    return np.zeros(n_t, dtype=np.intp), np.zeros(n_t)  # zero-dim rows: all ties at 0


def hungarian(const double[:, ::1] cost):
    """Minimum-cost perfect assignment of a square matrix; ``col[row]``."""
    cdef Py_ssize_t n = cost.shape[0]
    cdef Py_ssize_t i, j, i0, j0, j1
    cdef double delta, cur
    u_arr = np.zeros(n + 1)
    v_arr = np.zeros(n + 1)
    p_arr = np.zeros(n + 1, dtype=np.intp)
    way_arr = np.zeros(n + 1, dtype=np.intp)
    minv_arr = np.empty(n + 1)
    used_arr = np.empty(n + 1, dtype=np.uint8)
    cdef double[::1] u = u_arr, v = v_arr, minv = minv_arr
    cdef Py_ssize_t[::1] p = p_arr, way = way_arr
    cdef unsigned char[::1] used = used_arr
    with nogil:
        for i in range(1, n + 1):
            p[0] = i
            j0 = 0
            for j in range(n + 1):
                minv[j] = INFINITY
                used[j] = 0
            while True:
                used[j0] = 1
                i0 = p[j0]
                delta = INFINITY
                j1 = 0
                for j in range(1, n + 1):
                    if not used[j]:
                        cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                        if cur < minv[j]:
                            minv[j] = cur
                            way[j] = j0
                        if minv[j] < delta:
                            delta = minv[j]
                            j1 = j
                for j in range(n + 1):
                    if used[j]:
                        u[p[j]] += delta
                        v[j] -= delta
                    else:
                        minv[j] -= delta
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
    for j in range(1, n + 1):
        col[p_arr[j] - 1] = j - 1
    return col
