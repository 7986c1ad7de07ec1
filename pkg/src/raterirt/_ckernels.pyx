# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-record likelihood kernels; see ``_pykernels`` for the contract."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


cdef inline double _row(const double* cum, double eta, Py_ssize_t k,
                        double* a, double* p) noexcept nogil:
    cdef Py_ssize_t c
    cdef double m, z = 0.0
    for c in range(k):
        a[c] = c * eta - cum[c]
    m = a[0]
    for c in range(1, k):
        if a[c] > m:
            m = a[c]
    for c in range(k):
        p[c] = exp(a[c] - m)
        z += p[c]
    for c in range(k):
        p[c] /= z
    return m + log(z)


def record_probs(const double[::1] eta, const cnp.int64_t[::1] grp,
                 const double[:, ::1] cumtau):
    cdef Py_ssize_t r, n = eta.shape[0], k = cumtau.shape[1]
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] po = out
    cdef double[::1] a = np.empty(k)
    with nogil:
        for r in range(n):
            _row(&cumtau[grp[r], 0], eta[r], k, &a[0], &po[r, 0])
    return out


def record_terms(const double[::1] eta, const cnp.int64_t[::1] grp,
                 const double[:, ::1] cumtau, const double[:, ::1] y):
    cdef Py_ssize_t r, c, n = eta.shape[0], k = cumtau.shape[1]
    ll_a = np.empty(n)
    resid_a = np.empty(n)
    var_a = np.empty(n)
    cdef double[::1] ll = ll_a, resid = resid_a, var = var_a
    cdef double[::1] a = np.empty(k), p = np.empty(k)
    cdef double logz, s, ep, e2, ey
    with nogil:
        for r in range(n):
            logz = _row(&cumtau[grp[r], 0], eta[r], k, &a[0], &p[0])
            s = 0.0
            ep = 0.0
            e2 = 0.0
            ey = 0.0
            for c in range(k):
                s += y[r, c] * a[c]
                ep += c * p[c]
                e2 += c * c * p[c]
                ey += c * y[r, c]
            ll[r] = s - logz
            resid[r] = ey - ep
            var[r] = e2 - ep * ep
            if var[r] < 0.0:
                var[r] = 0.0
    return ll_a, resid_a, var_a


def record_loglik(const double[::1] eta, const cnp.int64_t[::1] grp,
                  const double[:, ::1] cumtau, const double[:, ::1] y):
    cdef Py_ssize_t r, c, n = eta.shape[0], k = cumtau.shape[1]
    ll_a = np.empty(n)
    cdef double[::1] ll = ll_a
    cdef double[::1] a = np.empty(k), p = np.empty(k)
    cdef double logz, s
    with nogil:
        for r in range(n):
            logz = _row(&cumtau[grp[r], 0], eta[r], k, &a[0], &p[0])
            s = 0.0
            for c in range(k):
                s += y[r, c] * a[c]
            ll[r] = s - logz
    return ll_a


def tau_terms(const double[::1] eta, const cnp.int64_t[::1] grp,
              const double[:, ::1] cumtau, const double[:, ::1] y,
              Py_ssize_t n_groups):
    cdef Py_ssize_t r, c, h, h2, g, n = eta.shape[0], k = cumtau.shape[1]
    ll_a = np.zeros(n_groups)
    grad_a = np.zeros((n_groups, k - 1))
    info_a = np.zeros((n_groups, k - 1, k - 1))
    cdef double[::1] ll = ll_a
    cdef double[:, ::1] grad = grad_a
    cdef double[:, :, ::1] info = info_a
    cdef double[::1] a = np.empty(k), p = np.empty(k)
    cdef double[::1] sp = np.empty(k), sy = np.empty(k)
    cdef double logz, s
    with nogil:
        for r in range(n):
            g = grp[r]
            logz = _row(&cumtau[g, 0], eta[r], k, &a[0], &p[0])
            s = 0.0
            for c in range(k):
                s += y[r, c] * a[c]
            ll[g] += s - logz
            sp[k - 1] = p[k - 1]
            sy[k - 1] = y[r, k - 1]
            for c in range(k - 2, 0, -1):
                sp[c] = sp[c + 1] + p[c]
                sy[c] = sy[c + 1] + y[r, c]
            for h in range(1, k):
                grad[g, h - 1] += sp[h] - sy[h]
                for h2 in range(h, k):
                    s = sp[h2] - sp[h] * sp[h2]
                    info[g, h - 1, h2 - 1] += s
                    if h2 != h:
                        info[g, h2 - 1, h - 1] += s
    return ll_a, grad_a, info_a
