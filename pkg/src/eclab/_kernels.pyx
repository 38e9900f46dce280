# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled orbit and Newton kernels (see ``eclab._fallback`` for semantics)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, fabs, floor, M_PI

cnp.import_array()

DEF NMAX = 4


cdef inline void _lift(const double* x, int n, const double[:, ::1] A,
                       const double[:, ::1] pfreq, const long[::1] pcoord,
                       const double[::1] pcos, const double[::1] psin,
                       double* y, double* jac) noexcept nogil:
    cdef int i, j, t, c
    cdef double theta, s, co, v, dv
    for i in range(n):
        y[i] = 0.0
        for j in range(n):
            y[i] += A[i, j] * x[j]
            jac[i * n + j] = A[i, j]
    for t in range(pcoord.shape[0]):
        theta = 0.0
        for j in range(n):
            theta += pfreq[t, j] * x[j]
        theta *= 2.0 * M_PI
        s = sin(theta)
        co = cos(theta)
        c = pcoord[t]
        y[c] += pcos[t] * co + psin[t] * s
        dv = 2.0 * M_PI * (-pcos[t] * s + psin[t] * co)
        for j in range(n):
            jac[c * n + j] += dv * pfreq[t, j]


cdef inline int _solve(double* M, double* r, int n) noexcept nogil:
    # Gaussian elimination with partial pivoting, in place; r <- M^{-1} r.
    cdef int i, j, k, piv
    cdef double best, tmp, fac
    for k in range(n):
        piv = k
        best = fabs(M[k * n + k])
        for i in range(k + 1, n):
            if fabs(M[i * n + k]) > best:
                best = fabs(M[i * n + k])
                piv = i
        if best == 0.0:
            return -1
        if piv != k:
            for j in range(n):
                tmp = M[k * n + j]
                M[k * n + j] = M[piv * n + j]
                M[piv * n + j] = tmp
            tmp = r[k]
            r[k] = r[piv]
            r[piv] = tmp
        for i in range(k + 1, n):
            fac = M[i * n + k] / M[k * n + k]
            for j in range(k, n):
                M[i * n + j] -= fac * M[k * n + j]
            r[i] -= fac * r[k]
    for k in range(n - 1, -1, -1):
        for j in range(k + 1, n):
            r[k] -= M[k * n + j] * r[j]
        r[k] /= M[k * n + k]
    return 0


def lift_jacobian(x, A, pfreq, pcoord, pcos, psin):
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, ::1] pf = np.ascontiguousarray(pfreq, dtype=np.float64).reshape(-1, xv.shape[1])
    cdef long[::1] pc = np.ascontiguousarray(pcoord, dtype=np.int64)
    cdef double[::1] pa = np.ascontiguousarray(pcos, dtype=np.float64)
    cdef double[::1] pb = np.ascontiguousarray(psin, dtype=np.float64)
    cdef Py_ssize_t P = xv.shape[0]
    cdef int n = xv.shape[1]
    y = np.empty((P, n))
    jac = np.empty((P, n, n))
    cdef double[:, ::1] yv = y
    cdef double[:, :, ::1] jv = jac
    cdef Py_ssize_t p
    with nogil:
        for p in range(P):
            _lift(&xv[p, 0], n, Av, pf, pc, pa, pb, &yv[p, 0], &jv[p, 0, 0])
    return y, jac


def newton_solve(targets, seeds, A, pfreq, pcoord, pcos, psin, double tol=1e-12, int maxiter=50):
    cdef double[:, ::1] tv = np.ascontiguousarray(targets, dtype=np.float64)
    x = np.array(seeds, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] xv = x
    cdef double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef int n = xv.shape[1]
    cdef double[:, ::1] pf = np.ascontiguousarray(pfreq, dtype=np.float64).reshape(-1, n)
    cdef long[::1] pc = np.ascontiguousarray(pcoord, dtype=np.int64)
    cdef double[::1] pa = np.ascontiguousarray(pcos, dtype=np.float64)
    cdef double[::1] pb = np.ascontiguousarray(psin, dtype=np.float64)
    cdef Py_ssize_t P = xv.shape[0]
    resid = np.empty(P)
    iters = np.zeros(P, dtype=np.int64)
    cdef double[::1] rv = resid
    cdef long[::1] iv = iters
    cdef double y[NMAX]
    cdef double jac[NMAX * NMAX]
    cdef double r[NMAX]
    cdef double rn
    cdef Py_ssize_t p
    cdef int it, i
    with nogil:
        for p in range(P):
            for it in range(maxiter + 1):
                _lift(&xv[p, 0], n, Av, pf, pc, pa, pb, y, jac)
                rn = 0.0
                for i in range(n):
                    r[i] = y[i] - tv[p, i]
                    if fabs(r[i]) > rn:
                        rn = fabs(r[i])
                rv[p] = rn
                if rn < tol or it == maxiter:
                    break
                if _solve(jac, r, n) != 0:
                    break
                for i in range(n):
                    xv[p, i] -= r[i]
                iv[p] += 1
    return x, resid, iters


def eval_modes(points, modes, coefs):
    from eclab._fallback import eval_modes as _em
    return _em(points, modes, coefs)


def orbit_series(points, A, pfreq, pcoord, pcos, psin, modes, coefs, offsets, int degree):
    cdef double[:, ::1] xin = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t P = xin.shape[0]
    cdef int n = xin.shape[1]
    cdef double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, ::1] pf = np.ascontiguousarray(pfreq, dtype=np.float64).reshape(-1, n)
    cdef long[::1] pc = np.ascontiguousarray(pcoord, dtype=np.int64)
    cdef double[::1] pa = np.ascontiguousarray(pcos, dtype=np.float64)
    cdef double[::1] pb = np.ascontiguousarray(psin, dtype=np.float64)
    cdef double[:, ::1] mv = np.ascontiguousarray(modes, dtype=np.float64).reshape(-1, n)
    cc = np.ascontiguousarray(coefs, dtype=np.complex128)
    cdef int ncomp = cc.shape[1]
    cdef double[:, ::1] cre = np.ascontiguousarray(cc.real)
    cdef double[:, ::1] cim = np.ascontiguousarray(cc.imag)
    cdef long[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef int depth = off.shape[0] - 1
    out = np.zeros((P, ncomp))
    cdef double[:, ::1] ov = out
    cdef double x[NMAX]
    cdef double y[NMAX]
    cdef double jac[NMAX * NMAX]
    cdef double D[NMAX * NMAX]
    cdef double T[NMAX * NMAX]
    cdef double b[NMAX]
    cdef double theta, co, s
    cdef Py_ssize_t p, m
    cdef int i, j, l, c
    with nogil:
        for p in range(P):
            for i in range(n):
                x[i] = xin[p, i]
                for j in range(n):
                    D[i * n + j] = 1.0 if i == j else 0.0
            for l in range(depth):
                if off[l + 1] > off[l]:
                    for c in range(ncomp):
                        b[c] = 0.0
                    for m in range(off[l], off[l + 1]):
                        theta = 0.0
                        for i in range(n):
                            theta += mv[m, i] * x[i]
                        theta *= 2.0 * M_PI
                        co = cos(theta)
                        s = sin(theta)
                        for c in range(ncomp):
                            b[c] += cre[m, c] * co - cim[m, c] * s
                    if degree == 0:
                        for c in range(ncomp):
                            ov[p, c] += b[c]
                    else:
                        for i in range(n):
                            for j in range(n):
                                ov[p, i] += D[j * n + i] * b[j]
                if l + 1 < depth:
                    _lift(x, n, Av, pf, pc, pa, pb, y, jac)
                    if degree == 1:
                        for i in range(n):
                            for j in range(n):
                                T[i * n + j] = 0.0
                                for c in range(n):
                                    T[i * n + j] += jac[i * n + c] * D[c * n + j]
                        for i in range(n * n):
                            D[i] = T[i]
                    for i in range(n):
                        x[i] = y[i] - floor(y[i])
    return out
