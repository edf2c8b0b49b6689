# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: single-vector MLP backprop, row ranking, Gini split search."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, INFINITY

cdef double TIE_EPS = 1e-12

cnp.import_array()


def mlp_input_gradient(double[:, ::1] W1, double[::1] b1, double[:, ::1] W2,
                       double[::1] b2, double[::1] x, int target):
    cdef Py_ssize_t m = W1.shape[0], h = W1.shape[1], i, j
    cdef double[::1] pre = np.empty(h)
    cdef double[::1] dh = np.empty(h)
    p_arr = np.empty(2)
    g_arr = np.zeros(m)
    cdef double[::1] p = p_arr
    cdef double[::1] g = g_arr
    cdef double z0, z1, zmax, e0, e1, s, d0, d1
    with nogil:
        for j in range(h):
            pre[j] = b1[j]
        for i in range(m):
            if x[i] != 0.0:
                for j in range(h):
                    pre[j] += x[i] * W1[i, j]
        z0 = b2[0]
        z1 = b2[1]
        for j in range(h):
            if pre[j] > 0.0:
                z0 += pre[j] * W2[j, 0]
                z1 += pre[j] * W2[j, 1]
        zmax = z0 if z0 > z1 else z1
        e0 = exp(z0 - zmax)
        e1 = exp(z1 - zmax)
        s = e0 + e1
        p[0] = e0 / s
        p[1] = e1 / s
        d0 = p[0] - (1.0 if target == 0 else 0.0)
        d1 = p[1] - (1.0 if target == 1 else 0.0)
        for j in range(h):
            if pre[j] > 0.0:
                dh[j] = W2[j, 0] * d0 + W2[j, 1] * d1
            else:
                dh[j] = 0.0
        for i in range(m):
            s = 0.0
            for j in range(h):
                s += W1[i, j] * dh[j]
            g[i] = s
    return p_arr, g_arr


def rank_rows(values, eligible, bint higher_better):
    cdef double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef cnp.uint8_t[:, ::1] ok = np.ascontiguousarray(eligible, dtype=np.uint8)
    cdef Py_ssize_t n_rows = v.shape[0], k = v.shape[1], i, a, b, c, n_ok
    out_arr = np.empty((n_rows, k))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] key = np.empty(k)
    cdef Py_ssize_t[::1] idx = np.empty(k, dtype=np.intp)
    cdef Py_ssize_t t
    cdef double kv, avg
    with nogil:
        for i in range(n_rows):
            n_ok = 0
            for a in range(k):
                if ok[i, a]:
                    key[n_ok] = -v[i, a] if higher_better else v[i, a]
                    idx[n_ok] = a
                    n_ok += 1
            # insertion sort on (key, original index); k is small
            for a in range(1, n_ok):
                kv = key[a]
                t = idx[a]
                b = a - 1
                while b >= 0 and key[b] > kv:
                    key[b + 1] = key[b]
                    idx[b + 1] = idx[b]
                    b -= 1
                key[b + 1] = kv
                idx[b + 1] = t
            a = 0
            while a < n_ok:
                b = a
                while b + 1 < n_ok and key[b + 1] == key[a]:
                    b += 1
                avg = (a + b + 2) / 2.0
                for c in range(a, b + 1):
                    out[i, idx[c]] = avg
                a = b + 1
            if n_ok < k:
                avg = (n_ok + 1 + k) / 2.0
                for a in range(k):
                    if not ok[i, a]:
                        out[i, a] = avg
    return out_arr


def best_split(X, y, Py_ssize_t n_classes):
    cdef double[:, ::1] xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t[::1] yv = np.ascontiguousarray(y, dtype=np.intp)
    cdef Py_ssize_t n = xv.shape[0], d = xv.shape[1], f, i, c, r
    cdef Py_ssize_t best_f = -1
    cdef double best_thr = 0.0, best_w = INFINITY
    if n < 2:
        return (-1, 0.0, INFINITY)
    cdef double[::1] total = np.zeros(n_classes)
    cdef double[::1] left = np.empty(n_classes)
    cdef double[::1] col = np.empty(n)
    cdef Py_ssize_t[::1] ycol = np.empty(n, dtype=np.intp)
    cdef double n_left, n_right, sl, sr, w, a, b, thr, q
    cdef Py_ssize_t[::1] order
    for i in range(n):
        total[yv[i]] += 1.0
    for f in range(d):
        order = np.argsort(np.asarray(xv[:, f]), kind="stable").astype(np.intp)
        for r in range(n):
            col[r] = xv[order[r], f]
            ycol[r] = yv[order[r]]
        with nogil:
            for c in range(n_classes):
                left[c] = 0.0
            for r in range(n - 1):
                left[ycol[r]] += 1.0
                if not (col[r] < col[r + 1]):
                    continue
                n_left = r + 1.0
                n_right = n - n_left
                sl = 0.0
                sr = 0.0
                for c in range(n_classes):
                    q = total[c] - left[c]
                    sl = sl + left[c] * left[c]
                    sr = sr + q * q
                w = (n - sl / n_left - sr / n_right) / n
                if w < best_w - TIE_EPS:
                    a = col[r]
                    b = col[r + 1]
                    thr = (a + b) / 2.0
                    if thr >= b:
                        thr = a
                    best_w = w
                    best_f = f
                    best_thr = thr
    return (best_f, best_thr, best_w)
