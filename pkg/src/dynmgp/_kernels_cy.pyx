# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twin of _kernels_py: pairwise non-stationary covariance blocks
and their parameter gradients."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def pairwise_cov(double[:, ::1] xa, double[:, ::1] xb,
                 double[::1] aL, double[:, ::1] thL,
                 double[::1] aR, double[:, ::1] thR):
    cdef Py_ssize_t na = xa.shape[0], nb = xb.shape[0], d = xa.shape[1]
    cdef Py_ssize_t a, b, l
    cdef double s, diff, acc
    K_arr = np.empty((na, nb), dtype=np.float64)
    cdef double[:, ::1] K = K_arr
    cdef double[::1] loghL = np.empty(na, dtype=np.float64)
    cdef double[::1] loghR = np.empty(nb, dtype=np.float64)
    for a in range(na):
        acc = 0.0
        for l in range(d):
            acc += log(thL[a, l])
        loghL[a] = 0.25 * acc
    for b in range(nb):
        acc = 0.0
        for l in range(d):
            acc += log(thR[b, l])
        loghR[b] = 0.25 * acc
    for a in range(na):
        for b in range(nb):
            acc = loghL[a] + loghR[b]
            for l in range(d):
                s = thL[a, l] + thR[b, l]
                diff = xa[a, l] - xb[b, l]
                acc -= 0.5 * log(s) + 0.5 * diff * diff / s
            K[a, b] = aL[a] * aR[b] * exp(acc)
    return K_arr


def pairwise_cov_grads(double[:, ::1] xa, double[:, ::1] xb,
                       double[::1] aL, double[:, ::1] thL,
                       double[::1] aR, double[:, ::1] thR,
                       double[:, ::1] K, double[:, ::1] G):
    cdef Py_ssize_t na = xa.shape[0], nb = xb.shape[0], d = xa.shape[1]
    cdef Py_ssize_t a, b, l
    cdef double w, s, diff, f
    daL_arr = np.zeros(na, dtype=np.float64)
    daR_arr = np.zeros(nb, dtype=np.float64)
    dthL_arr = np.zeros((na, d), dtype=np.float64)
    dthR_arr = np.zeros((nb, d), dtype=np.float64)
    cdef double[::1] daL = daL_arr
    cdef double[::1] daR = daR_arr
    cdef double[:, ::1] dthL = dthL_arr
    cdef double[:, ::1] dthR = dthR_arr
    for a in range(na):
        for b in range(nb):
            w = G[a, b] * K[a, b]
            daL[a] += w / aL[a]
            daR[b] += w / aR[b]
            for l in range(d):
                s = thL[a, l] + thR[b, l]
                diff = xa[a, l] - xb[b, l]
                f = (0.5 * diff * diff / s - 0.5) / s
                dthL[a, l] += w * (f + 0.25 / thL[a, l])
                dthR[b, l] += w * (f + 0.25 / thR[b, l])
    return daL_arr, dthL_arr, daR_arr, dthR_arr
