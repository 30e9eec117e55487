"""Pure-Python fallbacks for the compiled Sturm kernels.

Same signatures and results as ``_kernels.pyx``.  The recurrence is
sequential in the matrix index, so the fallback vectorizes across shifts
instead: every requested eigenvalue is bisected simultaneously.
"""

from __future__ import annotations

import numpy as np

_EPS = np.finfo(float).eps
_TINY = 1e-300


def _counts(kd, ko, md, mo, lams):
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    neg = np.zeros(lams.shape, dtype=np.int64)
    d = kd[0] - lams * md[0]
    zero = d == 0.0
    if zero.any():
        d[zero] = -_EPS * (abs(kd[0]) + np.abs(lams[zero] * md[0])) - _TINY
    neg += d < 0.0
    for i in range(1, kd.shape[0]):
        off = ko[i - 1] - lams * mo[i - 1]
        d = (kd[i] - lams * md[i]) - off * off / d
        zero = d == 0.0
        if zero.any():
            d[zero] = -_EPS * (abs(kd[i]) + np.abs(lams[zero] * md[i])) - _TINY
        neg += d < 0.0
    return neg


def sturm_count(kd, ko, md, mo, lam):
    return int(_counts(kd, ko, md, mo, [lam])[0])


def bisect_eigenvalues(kd, ko, md, mo, lo, hi, first, last, atol, max_iter=400):
    m = last - first + 1
    a = np.full(m, float(lo))
    b = np.full(m, float(hi))
    targets = np.arange(first, last + 1)
    total = 0
    for _ in range(max_iter):
        tol = atol + 4.0 * _EPS * np.maximum(np.abs(a), np.abs(b))
        mid = 0.5 * (a + b)
        active = (b - a > tol) & (mid > a) & (mid < b)
        if not active.any():
            break
        c = _counts(kd, ko, md, mo, mid[active])
        total += int(active.sum())
        upper = c > targets[active]
        idx = np.flatnonzero(active)
        b[idx[upper]] = mid[active][upper]
        a[idx[~upper]] = mid[active][~upper]
    return 0.5 * (a + b), total


def tridiag_solve(diag, off, rhs):
    n = diag.shape[0]
    x = np.empty(n)
    cp = np.empty(n)
    piv = diag[0]
    scale = abs(diag[0]) + (abs(off[0]) if n > 1 else 0.0)
    if abs(piv) < _EPS * scale:
        piv = _EPS * scale + _TINY
    cp[0] = off[0] / piv if n > 1 else 0.0
    x[0] = rhs[0] / piv
    for i in range(1, n):
        piv = diag[i] - off[i - 1] * cp[i - 1]
        scale = abs(diag[i]) + abs(off[i - 1])
        if abs(piv) < _EPS * scale:
            piv = _EPS * scale + _TINY
        if i < n - 1:
            cp[i] = off[i] / piv
        x[i] = (rhs[i] - off[i - 1] * x[i - 1]) / piv
    for i in range(n - 2, -1, -1):
        x[i] -= cp[i] * x[i + 1]
    return x
