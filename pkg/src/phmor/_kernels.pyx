# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled resolvent kernel for small dense reduced models.

For every shift ``s_k`` computes ``X_k = (s_k I - A)^{-1} B``,
``Y_k = C (s_k I - A)^{-1}`` and ``H_k = C X_k`` with one complex LU
factorization (partial pivoting) per shift.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, hypot

cnp.import_array()

ctypedef double complex cplx


cdef inline double cabs1(cplx z) nogil:
    return hypot(z.real, z.imag)


cdef int _lu(cplx[:, ::1] M, Py_ssize_t[::1] piv, Py_ssize_t r) nogil:
    cdef Py_ssize_t i, j, k, p
    cdef double best, a
    cdef cplx t, f
    for k in range(r):
        p = k
        best = cabs1(M[k, k])
        for i in range(k + 1, r):
            a = cabs1(M[i, k])
            if a > best:
                best = a
                p = i
        piv[k] = p
        if best == 0.0:
            return 1
        if p != k:
            for j in range(r):
                t = M[k, j]
                M[k, j] = M[p, j]
                M[p, j] = t
        for i in range(k + 1, r):
            f = M[i, k] / M[k, k]
            M[i, k] = f
            for j in range(k + 1, r):
                M[i, j] = M[i, j] - f * M[k, j]
    return 0


cdef void _solve(cplx[:, ::1] LU, Py_ssize_t[::1] piv, cplx[:, ::1] rhs,
                 Py_ssize_t r, Py_ssize_t m) nogil:
    # LU x = P rhs, in place
    cdef Py_ssize_t i, j, c
    cdef cplx t
    for i in range(r):
        if piv[i] != i:
            for c in range(m):
                t = rhs[i, c]
                rhs[i, c] = rhs[piv[i], c]
                rhs[piv[i], c] = t
    for c in range(m):
        for i in range(1, r):
            t = rhs[i, c]
            for j in range(i):
                t = t - LU[i, j] * rhs[j, c]
            rhs[i, c] = t
        for i in range(r - 1, -1, -1):
            t = rhs[i, c]
            for j in range(i + 1, r):
                t = t - LU[i, j] * rhs[j, c]
            rhs[i, c] = t / LU[i, i]


cdef void _solve_transposed(cplx[:, ::1] LU, Py_ssize_t[::1] piv, cplx[:, ::1] rhs,
                            Py_ssize_t r, Py_ssize_t m) nogil:
    # (P^T L U)^T x = rhs  <=>  U^T L^T P x = rhs
    cdef Py_ssize_t i, j, c
    cdef cplx t
    for c in range(m):
        for i in range(r):
            t = rhs[i, c]
            for j in range(i):
                t = t - LU[j, i] * rhs[j, c]
            rhs[i, c] = t / LU[i, i]
        for i in range(r - 2, -1, -1):
            t = rhs[i, c]
            for j in range(i + 1, r):
                t = t - LU[j, i] * rhs[j, c]
            rhs[i, c] = t
    for i in range(r - 1, -1, -1):
        if piv[i] != i:
            for c in range(m):
                t = rhs[i, c]
                rhs[i, c] = rhs[piv[i], c]
                rhs[piv[i], c] = t


def resolvent_batch(A, B, C, s):
    """Return ``(H, X, Y)`` with shapes ``(K, p, m)``, ``(K, r, m)``, ``(K, p, r)``.

    Raises ``ZeroDivisionError`` with the offending index when ``s_k I - A``
    is exactly singular.
    """
    cdef double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, ::1] Bv = np.ascontiguousarray(B, dtype=np.float64)
    cdef double[:, ::1] Cv = np.ascontiguousarray(C, dtype=np.float64)
    cdef cplx[::1] sv = np.ascontiguousarray(s, dtype=np.complex128).ravel()
    cdef Py_ssize_t r = Av.shape[0], m = Bv.shape[1], p = Cv.shape[0]
    cdef Py_ssize_t K = sv.shape[0]
    cdef Py_ssize_t k, i, j, l
    cdef int bad = -1
    cdef cplx acc

    Hn = np.empty((K, p, m), dtype=np.complex128)
    Xn = np.empty((K, r, m), dtype=np.complex128)
    Yn = np.empty((K, p, r), dtype=np.complex128)
    cdef cplx[:, :, ::1] H = Hn
    cdef cplx[:, :, ::1] X = Xn
    cdef cplx[:, :, ::1] Y = Yn
    cdef cplx[:, ::1] M = np.empty((r, r), dtype=np.complex128)
    cdef cplx[:, ::1] rx = np.empty((r, m), dtype=np.complex128)
    cdef cplx[:, ::1] ry = np.empty((r, p), dtype=np.complex128)
    cdef Py_ssize_t[::1] piv = np.empty(max(r, 1), dtype=np.intp)

    with nogil:
        for k in range(K):
            for i in range(r):
                for j in range(r):
                    M[i, j] = -Av[i, j]
                M[i, i] = M[i, i] + sv[k]
            if _lu(M, piv, r) != 0:
                bad = <int>k
                break
            for i in range(r):
                for j in range(m):
                    rx[i, j] = Bv[i, j]
                for j in range(p):
                    ry[i, j] = Cv[j, i]
            _solve(M, piv, rx, r, m)
            _solve_transposed(M, piv, ry, r, p)
            for i in range(r):
                for j in range(m):
                    X[k, i, j] = rx[i, j]
                for j in range(p):
                    Y[k, j, i] = ry[i, j]
            for i in range(p):
                for j in range(m):
                    acc = 0
                    for l in range(r):
                        acc = acc + Cv[i, l] * rx[l, j]
                    H[k, i, j] = acc
    if bad >= 0:
        raise ZeroDivisionError(bad)
    return Hn, Xn, Yn
