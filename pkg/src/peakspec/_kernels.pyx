# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Sturm-sequence kernels for symmetric tridiagonal pencils.

A pencil is given by the diagonals of the stiffness ``K`` (``kd``, ``ko``)
and of the mass ``M`` (``md``, ``mo``); ``ko``/``mo`` hold the first
super-diagonal.  ``M`` must be positive definite, so by Sylvester's law the
number of negative pivots of ``K - lam*M`` counts the eigenvalues below
``lam``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

cdef double _EPS = 2.220446049250313e-16
cdef double _TINY = 1e-300


cdef Py_ssize_t _count(const double[::1] kd, const double[::1] ko,
                       const double[::1] md, const double[::1] mo,
                       double lam) noexcept nogil:
    cdef Py_ssize_t n = kd.shape[0]
    cdef Py_ssize_t i, neg = 0
    cdef double d, off, diag
    diag = kd[0] - lam * md[0]
    d = diag
    if d == 0.0:
        d = -_EPS * (fabs(kd[0]) + fabs(lam * md[0])) - _TINY
    if d < 0.0:
        neg += 1
    for i in range(1, n):
        off = ko[i - 1] - lam * mo[i - 1]
        diag = kd[i] - lam * md[i]
        d = diag - off * off / d
        if d == 0.0:
            d = -_EPS * (fabs(kd[i]) + fabs(lam * md[i])) - _TINY
        if d < 0.0:
            neg += 1
    return neg


def sturm_count(double[::1] kd, double[::1] ko, double[::1] md, double[::1] mo,
                double lam):
    """Number of eigenvalues of the pencil strictly below ``lam``."""
    return _count(kd, ko, md, mo, lam)


def bisect_eigenvalues(double[::1] kd, double[::1] ko, double[::1] md,
                       double[::1] mo, double lo, double hi,
                       Py_ssize_t first, Py_ssize_t last, double atol,
                       Py_ssize_t max_iter=400):
    """Eigenvalues with zero-based indices ``first..last`` by bisection.

    ``[lo, hi]`` must enclose all requested eigenvalues.  Each interval is
    shrunk until its width is below ``atol + 4*eps*max(|lo|, |hi|)``.
    Returns ``(values, iterations)``.
    """
    cdef Py_ssize_t k, it, c, total = 0
    cdef double a, b, mid, tol
    cdef Py_ssize_t m = last - first + 1
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] res = out
    cdef double prev_lo = lo
    with nogil:
        for k in range(m):
            a = prev_lo
            b = hi
            for it in range(max_iter):
                tol = atol + 4.0 * _EPS * (fabs(a) if fabs(a) > fabs(b) else fabs(b))
                if b - a <= tol:
                    break
                mid = 0.5 * (a + b)
                if mid <= a or mid >= b:
                    break
                c = _count(kd, ko, md, mo, mid)
                if c > first + k:
                    b = mid
                else:
                    a = mid
                total += 1
            res[k] = 0.5 * (a + b)
            # eigenvalues are ordered, so the next search starts at this one
            prev_lo = a
    return out, total


def tridiag_solve(double[::1] diag, double[::1] off, double[::1] rhs):
    """Solve a symmetric tridiagonal system by Gaussian elimination.

    Zero pivots are replaced by a tiny multiple of the row scale, which is
    the standard guard for inverse iteration at a converged shift.
    """
    cdef Py_ssize_t n = diag.shape[0]
    cdef Py_ssize_t i
    cdef double piv, scale
    x_arr = np.empty(n, dtype=np.float64)
    c_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] x = x_arr
    cdef double[::1] cp = c_arr
    with nogil:
        piv = diag[0]
        scale = fabs(diag[0]) + (fabs(off[0]) if n > 1 else 0.0)
        if fabs(piv) < _EPS * scale:
            piv = _EPS * scale + _TINY
        cp[0] = (off[0] / piv) if n > 1 else 0.0
        x[0] = rhs[0] / piv
        for i in range(1, n):
            piv = diag[i] - off[i - 1] * cp[i - 1]
            scale = fabs(diag[i]) + fabs(off[i - 1])
            if fabs(piv) < _EPS * scale:
                piv = _EPS * scale + _TINY
            if i < n - 1:
                cp[i] = off[i] / piv
            x[i] = (rhs[i] - off[i - 1] * x[i - 1]) / piv
        for i in range(n - 2, -1, -1):
            x[i] -= cp[i] * x[i + 1]
    return x_arr
