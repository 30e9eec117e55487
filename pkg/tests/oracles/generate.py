"""Regenerate ``oracle_values.json`` from methods independent of the package.

* Interval Robin eigenvalues: the four parity/sign branch equations solved
  with mpmath at 40 digits, with each branch root bracketed by sign scans.
* Eigenvalues of the half-line model operator: shooting with an adaptive
  ODE integrator from the regular Frobenius solution ``s^((p+q)/2)`` at the
  origin, bisecting on ``f(S) = 0`` at a far endpoint ``S``.

Run with ``python3 tests/oracles/generate.py``; it needs mpmath.
"""

from __future__ import annotations

import json
from pathlib import Path

import mpmath as mp
import numpy as np
from scipy.integrate import solve_ivp

mp.mp.dps = 40


def _scan_roots(f, a, b, n=4000):
    xs = [a + (b - a) * i / n for i in range(n + 1)]
    out = []
    for x0, x1 in zip(xs, xs[1:]):
        f0, f1 = f(x0), f(x1)
        if f0 == 0:
            out.append(mp.mpf(x0))
        elif f0 * f1 < 0:
            out.append(mp.findroot(f, (x0, x1), solver="anderson"))
    return out


def interval_spectrum(L, r, count):
    """Lowest ``count`` eigenvalues of -f'' on (-L, L) with f'(+-L) = +-r f(+-L)."""
    L, r = mp.mpf(L), mp.mpf(r)
    vals = []
    kmax = mp.mpf(count + 3) * mp.pi / L
    # negative eigenvalues -k^2: even k tanh(kL) = r, odd k coth(kL) = r
    top = abs(r) + 5
    vals += [-(k ** 2) for k in _scan_roots(lambda k: k * mp.tanh(k * L) - r, mp.mpf("1e-9"), top)]
    vals += [-(k ** 2) for k in _scan_roots(lambda k: k * mp.cosh(k * L) - r * mp.sinh(k * L), mp.mpf("1e-9"), top)]
    # positive eigenvalues k^2: even k sin(kL) + r cos(kL) = 0, odd k cos(kL) - r sin(kL) = 0
    vals += [k ** 2 for k in _scan_roots(lambda k: k * mp.sin(k * L) + r * mp.cos(k * L), mp.mpf("1e-9"), kmax)]
    vals += [k ** 2 for k in _scan_roots(lambda k: k * mp.cos(k * L) - r * mp.sin(k * L), mp.mpf("1e-9"), kmax)]
    if r == 0:
        vals.append(mp.mpf(0))
    if r * L == 1:
        vals.append(mp.mpf(0))
    vals.sort()
    return [float(v) for v in vals[:count]]


def shoot(E, c2, p, q, S, s0=1e-8, terms=8):
    """``f(S)`` for the solution regular at 0 (``c1 = 0``).

    Near 0 the solution is ``s^nu sum_k a_k s^(k m)`` with ``m = 2 - q`` and
    ``a_k = -c2 a_(k-1) / (k m (2 nu - 1 + k m))``; the energy enters at
    relative order ``s0^2`` and is neglected in the start values.
    """
    g = (p + q) ** 2 - 2 * (p + q)
    nu = 0.5 * (p + q)
    m = 2 - q
    a = [1.0]
    for k in range(1, terms):
        a.append(-c2 * a[-1] / (k * m * (2 * nu - 1 + k * m)))
    f0 = sum(ak * s0 ** (nu + k * m) for k, ak in enumerate(a))
    df0 = sum(ak * (nu + k * m) * s0 ** (nu + k * m - 1) for k, ak in enumerate(a))

    def rhs(s, y):
        V = g / (4 * s * s) - c2 * s ** -q
        return [y[1], (V - E) * y[0]]

    sol = solve_ivp(rhs, (s0, S), [f0, df0], rtol=1e-13, atol=1e-300, method="DOP853")
    return sol.y[0, -1] / abs(sol.y[0]).max()


def model_eigenvalue(j, c2=1.0, p=1.2, q=1.5, S=400.0):
    """j-th eigenvalue: f(S) changes sign each time E crosses an eigenvalue."""
    Es = np.linspace(-0.2, -1e-4, 200)
    f = [shoot(E, c2, p, q, S) for E in Es]
    roots = []
    for i in range(len(Es) - 1):
        if f[i] * f[i + 1] < 0:
            lo, hi, flo = Es[i], Es[i + 1], f[i]
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                fm = shoot(mid, c2, p, q, S)
                if fm * flo < 0:
                    hi = mid
                else:
                    lo, flo = mid, fm
            roots.append(0.5 * (lo + hi))
    return roots[j - 1]


def main():
    cases = [(1.0, 1.0, 4), (0.5, 3.0, 4), (2.0, -0.5, 4), (1.0, 0.5, 4), (0.3, 3.5, 4), (4.0, 0.2, 4), (1.0, 0.0, 4)]
    out = {"interval": [], "phi": {}, "model": {}}
    for L, r, n in cases:
        out["interval"].append({"L": L, "r": r, "values": interval_spectrum(L, r, n)})
    e1 = mp.mpf(interval_spectrum(1.0, 30.0, 1)[0])
    # recompute phi(30) at full precision: E_1(B_{1,30}) = -k^2, k tanh k = 30
    k = mp.findroot(lambda k: k * mp.tanh(k) - 30, 30)
    out["phi"]["30"] = float((-(k ** 2) + 30) / 900)
    del e1
    out["model"]["p1.2_q1.5_E1"] = model_eigenvalue(1)
    out["model"]["p1.2_q1.5_E2"] = model_eigenvalue(2, S=1500.0)
    path = Path(__file__).with_name("oracle_values.json")
    path.write_text(json.dumps(out, indent=2) + "\n")
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
