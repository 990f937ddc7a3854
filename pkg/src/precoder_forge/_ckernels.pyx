# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled quadrature kernels; same contract as ``_npkernels``.

The log-sum-exp uses the m == k term as reference: its exponent is
-|n_p|^2/sigma^2, and every other exponent exceeds it by at most
|n_p|^2/sigma^2 = |v_p|^2, which is bounded by the node range, so the shifted
exponentials cannot overflow and the sum is at least one.

Terms whose exponent is provably more than ``prune`` below the reference are
skipped (bound: |n - a|^2 - |n|^2 >= |a|^2 - 2 |a| max_p |n_p|).
"""
import numpy as np

from libc.math cimport exp, log, sqrt
from libc.stdlib cimport free, malloc


cdef Py_ssize_t _neighbors(const double[:, ::1] s_re, const double[:, ::1] s_im,
                           Py_ssize_t k_lo, Py_ssize_t k_hi, double nmax,
                           double inv_s2, double prune,
                           Py_ssize_t[::1] indptr, Py_ssize_t* indices) noexcept nogil:
    cdef Py_ssize_t K = s_re.shape[0], R = s_re.shape[1]
    cdef Py_ssize_t k, m, r, cnt = 0
    cdef double a, b, d2, d
    indptr[0] = 0
    for k in range(k_lo, k_hi):
        for m in range(K):
            d2 = 0.0
            for r in range(R):
                a = s_re[k, r] - s_re[m, r]
                b = s_im[k, r] - s_im[m, r]
                d2 += a * a + b * b
            d = sqrt(d2)
            if (d2 - 2.0 * d * nmax) * inv_s2 <= prune:
                if indices != NULL:
                    indices[cnt] = m
                cnt += 1
        indptr[k - k_lo + 1] = cnt
    return cnt


cdef class _Neighbors:
    cdef Py_ssize_t* idx
    cdef public object indptr
    cdef public bint full

    def __cinit__(self):
        self.idx = NULL

    def __dealloc__(self):
        if self.idx != NULL:
            free(self.idx)


cdef _Neighbors _build(const double[:, ::1] s_re, const double[:, ::1] s_im,
                       Py_ssize_t k_lo, Py_ssize_t k_hi, double nmax,
                       double inv_s2, double prune):
    cdef Py_ssize_t K = s_re.shape[0]
    cdef _Neighbors nb = _Neighbors()
    indptr = np.zeros(k_hi - k_lo + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] ip = indptr
    cdef Py_ssize_t total
    nb.indptr = indptr
    nb.full = True
    if prune <= 0:
        return nb
    with nogil:
        total = _neighbors(s_re, s_im, k_lo, k_hi, nmax, inv_s2, prune, ip, NULL)
    if total > 0.6 * (k_hi - k_lo) * K:
        return nb
    nb.idx = <Py_ssize_t*> malloc(max(total, 1) * sizeof(Py_ssize_t))
    if nb.idx == NULL:
        raise MemoryError()
    with nogil:
        _neighbors(s_re, s_im, k_lo, k_hi, nmax, inv_s2, prune, ip, nb.idx)
    nb.full = False
    return nb


def _split(a):
    a = np.asarray(a)
    return np.ascontiguousarray(a.real, dtype=np.float64), np.ascontiguousarray(a.imag, dtype=np.float64)


def gh_lse(S, nodes, weights, double inv_s2, Py_ssize_t k_lo, Py_ssize_t k_hi, prune=50.0):
    cdef double[:, ::1] s_re, s_im, n_re, n_im
    s_re, s_im = _split(S)
    n_re, n_im = _split(nodes)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t K = s_re.shape[0], R = s_re.shape[1], P = n_re.shape[0]
    k_sums = np.zeros(k_hi - k_lo)
    node_sums = np.zeros(P)
    cdef double[::1] ks = k_sums, ns = node_sums
    cdef double nmax = float(np.sqrt((np.abs(np.asarray(nodes)) ** 2).sum(axis=1).max()))
    cdef _Neighbors nb = _build(s_re, s_im, k_lo, k_hi, nmax, inv_s2,
                                0.0 if prune is None else float(prune))
    cdef Py_ssize_t[::1] ip = nb.indptr
    cdef Py_ssize_t* idx = nb.idx
    cdef bint full = nb.full
    cdef Py_ssize_t k, p, r, j, j0, j1, m
    cdef double nn, acc, a, b, d2, lse, acc_k
    cdef double* zr = <double*> malloc(R * sizeof(double))
    cdef double* zi = <double*> malloc(R * sizeof(double))
    try:
        with nogil:
            for k in range(k_lo, k_hi):
                if full:
                    j0 = 0
                    j1 = K
                else:
                    j0 = ip[k - k_lo]
                    j1 = ip[k - k_lo + 1]
                acc_k = 0.0
                for p in range(P):
                    nn = 0.0
                    for r in range(R):
                        zr[r] = n_re[p, r] - s_re[k, r]
                        zi[r] = n_im[p, r] - s_im[k, r]
                        nn += n_re[p, r] * n_re[p, r] + n_im[p, r] * n_im[p, r]
                    acc = 0.0
                    for j in range(j0, j1):
                        m = j if full else idx[j]
                        d2 = 0.0
                        for r in range(R):
                            a = zr[r] + s_re[m, r]
                            b = zi[r] + s_im[m, r]
                            d2 += a * a + b * b
                        acc += exp((nn - d2) * inv_s2)
                    lse = log(acc) - nn * inv_s2
                    acc_k += w[p] * lse
                    ns[p] += lse
                ks[k - k_lo] = acc_k
    finally:
        free(zr)
        free(zi)
    return k_sums, node_sums


def gh_grad(S, X, nodes, weights, double inv_s2, Py_ssize_t k_lo, Py_ssize_t k_hi, prune=50.0):
    cdef double[:, ::1] s_re, s_im, n_re, n_im, x_re, x_im
    s_re, s_im = _split(S)
    n_re, n_im = _split(nodes)
    x_re, x_im = _split(X)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t K = s_re.shape[0], R = s_re.shape[1], P = n_re.shape[0], T = x_re.shape[1]
    k_sums = np.zeros(k_hi - k_lo)
    node_sums = np.zeros(P)
    q_arr = np.zeros(K)
    zx_arr = np.zeros((2, R, T))
    xb_arr = np.zeros((2, T, T))
    zxb_arr = np.zeros((2, R, T))
    cdef double[::1] ks = k_sums, ns = node_sums, q = q_arr
    cdef double[:, :, ::1] zx = zx_arr, xb = xb_arr, zxb = zxb_arr
    cdef double nmax = float(np.sqrt((np.abs(np.asarray(nodes)) ** 2).sum(axis=1).max()))
    cdef _Neighbors nb = _build(s_re, s_im, k_lo, k_hi, nmax, inv_s2,
                                0.0 if prune is None else float(prune))
    cdef Py_ssize_t[::1] ip = nb.indptr
    cdef Py_ssize_t* idx = nb.idx
    cdef bint full = nb.full
    cdef Py_ssize_t k, p, r, t, u, j, j0, j1, m
    cdef double nn, acc, a, b, d2, lse, acc_k, e, wp, cw, inv
    cdef double* zr = <double*> malloc(R * sizeof(double))
    cdef double* zi = <double*> malloc(R * sizeof(double))
    cdef double* mr = <double*> malloc(T * sizeof(double))
    cdef double* mi = <double*> malloc(T * sizeof(double))
    cdef double* buf = <double*> malloc(K * sizeof(double))
    try:
        with nogil:
            for k in range(k_lo, k_hi):
                if full:
                    j0 = 0
                    j1 = K
                else:
                    j0 = ip[k - k_lo]
                    j1 = ip[k - k_lo + 1]
                acc_k = 0.0
                for p in range(P):
                    nn = 0.0
                    for r in range(R):
                        zr[r] = n_re[p, r] - s_re[k, r]
                        zi[r] = n_im[p, r] - s_im[k, r]
                        nn += n_re[p, r] * n_re[p, r] + n_im[p, r] * n_im[p, r]
                    for t in range(T):
                        mr[t] = 0.0
                        mi[t] = 0.0
                    acc = 0.0
                    for j in range(j0, j1):
                        m = j if full else idx[j]
                        d2 = 0.0
                        for r in range(R):
                            a = zr[r] + s_re[m, r]
                            b = zi[r] + s_im[m, r]
                            d2 += a * a + b * b
                        e = exp((nn - d2) * inv_s2)
                        buf[j - j0] = e
                        acc += e
                        for t in range(T):
                            mr[t] += e * x_re[m, t]
                            mi[t] += e * x_im[m, t]
                    inv = 1.0 / acc
                    for t in range(T):
                        mr[t] *= inv
                        mi[t] *= inv
                    lse = log(acc) - nn * inv_s2
                    wp = w[p]
                    acc_k += wp * lse
                    ns[p] += lse
                    cw = wp * inv
                    for j in range(j0, j1):
                        m = j if full else idx[j]
                        q[m] += cw * buf[j - j0]
                    # z x_k^H and z xbar^H
                    for r in range(R):
                        for t in range(T):
                            zx[0, r, t] += wp * (zr[r] * x_re[k, t] + zi[r] * x_im[k, t])
                            zx[1, r, t] += wp * (zi[r] * x_re[k, t] - zr[r] * x_im[k, t])
                            zxb[0, r, t] += wp * (zr[r] * mr[t] + zi[r] * mi[t])
                            zxb[1, r, t] += wp * (zi[r] * mr[t] - zr[r] * mi[t])
                    # xbar x_k^H
                    for t in range(T):
                        for u in range(T):
                            xb[0, t, u] += wp * (mr[t] * x_re[k, u] + mi[t] * x_im[k, u])
                            xb[1, t, u] += wp * (mi[t] * x_re[k, u] - mr[t] * x_im[k, u])
                ks[k - k_lo] = acc_k
    finally:
        free(zr)
        free(zi)
        free(mr)
        free(mi)
        free(buf)
    return (k_sums, node_sums, zx_arr[0] + 1j * zx_arr[1], xb_arr[0] + 1j * xb_arr[1],
            zxb_arr[0] + 1j * zxb_arr[1], q_arr)
