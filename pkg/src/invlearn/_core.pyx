# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.

``jacobi_eigh`` and ``prox_power`` mirror :mod:`invlearn._fallback` exactly
(same rotation order, same Newton iteration), so both backends agree to
rounding.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, pow

cnp.import_array()


cdef double _offdiag_norm(double[:, ::1] a, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double s = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            s += a[i, j] * a[i, j]
    return sqrt(2.0 * s)


def jacobi_eigh(const double[:, ::1] m, double tol, int max_sweeps):
    """Cyclic Jacobi eigensolver for a symmetric matrix.

    Returns ``(w, V, sweeps, converged)`` with unsorted eigenvalues ``w`` and
    eigenvectors in the columns of ``V``.
    """
    cdef Py_ssize_t n = m.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] a_arr = np.array(m, dtype=np.float64, order="C")
    cdef cnp.ndarray[cnp.float64_t, ndim=2] vt_arr = np.eye(n, dtype=np.float64)
    cdef double[:, ::1] a = a_arr
    cdef double[:, ::1] vt = vt_arr
    cdef Py_ssize_t p, q, k
    cdef double apq, app, aqq, theta, t, c, s, akp, akq, frob, thresh
    cdef int sweep = 0
    cdef bint converged = False

    with nogil:
        frob = 0.0
        for p in range(n):
            for q in range(n):
                frob += a[p, q] * a[p, q]
        frob = sqrt(frob)
        thresh = tol * frob
        while sweep <= max_sweeps:
            if _offdiag_norm(a, n) <= thresh:
                converged = True
                break
            if sweep == max_sweeps:
                break
            sweep += 1
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = a[p, q]
                    if apq == 0.0:
                        continue
                    # negligible against both diagonals: zero it and skip
                    if sweep > 4 and fabs(a[p, p]) + 100.0 * fabs(apq) == fabs(a[p, p]) \
                            and fabs(a[q, q]) + 100.0 * fabs(apq) == fabs(a[q, q]):
                        a[p, q] = 0.0
                        a[q, p] = 0.0
                        continue
                    theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                    t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                    c = 1.0 / sqrt(t * t + 1.0)
                    s = t * c
                    app = a[p, p]
                    aqq = a[q, q]
                    for k in range(n):
                        akp = a[p, k]
                        akq = a[q, k]
                        a[p, k] = c * akp - s * akq
                        a[q, k] = s * akp + c * akq
                    for k in range(n):
                        a[k, p] = a[p, k]
                        a[k, q] = a[q, k]
                    a[p, p] = app - t * apq
                    a[q, q] = aqq + t * apq
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    for k in range(n):
                        akp = vt[p, k]
                        akq = vt[q, k]
                        vt[p, k] = c * akp - s * akq
                        vt[q, k] = s * akp + c * akq

    w = np.ascontiguousarray(np.diagonal(a_arr)).copy()
    return w, np.ascontiguousarray(vt_arr.T), sweep, bool(converged)


def prox_power(const double[::1] v, const double[::1] tau, double p, double tol, int max_iter):
    """Coordinatewise root of ``t + tau*sign(t)*|t|**(p-1) = v``.

    Newton's method runs on ``u = |t|**(p-1)``, where the equation
    ``u**k + tau*u = |v|`` (``k = 1/(p-1)``) is convex and increasing, so the
    iteration started right of the root decreases monotonically onto it.
    """
    cdef Py_ssize_t n = v.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double k = 1.0 / (p - 1.0)
    cdef double a, ti, u, un, h, dh, scale, uk
    cdef bint square = k == 2.0
    cdef int it
    with nogil:
        for i in range(n):
            a = fabs(v[i])
            ti = tau[i]
            if a == 0.0:
                out[i] = 0.0
                continue
            u = a / ti
            un = pow(a, p - 1.0)
            if un < u:
                u = un
            scale = a if a > 1.0 else 1.0
            for it in range(max_iter):
                uk = u * u if square else pow(u, k)
                h = uk + ti * u - a
                if fabs(h) <= tol * scale:
                    break
                # u > 0 here, so k u^(k-1) = k uk / u
                dh = k * uk / u + ti
                un = u - h / dh
                if un <= 0.0:
                    un = 0.5 * u
                if un == u:
                    break
                u = un
            uk = u * u if square else pow(u, k)
            out[i] = uk if v[i] > 0.0 else -uk
    return out_arr
