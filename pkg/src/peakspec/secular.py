"""Exact spectrum of the interval Robin Laplacian.

The operator acts as ``f -> -f''`` on ``(-L, L)`` with the boundary condition
``f'(+-L) = +-r f(+-L)``.  Writing ``rho = r L`` and ``x = k L`` the
eigenvalues are ``-x^2/L^2`` (negative branch), ``0`` or ``x^2/L^2``
(positive branch), where ``x`` solves one of

* even, negative:  ``x tanh x = rho``      (exists iff ``rho > 0``)
* odd, negative:   ``x coth x = rho``      (exists iff ``rho > 1``)
* even, zero:      ``rho = 0``, constant eigenfunction
* odd, zero:       ``rho = 1``, linear eigenfunction
* even, positive:  ``x tan x = -rho``
* odd, positive:   ``x cot x = rho``

All computations happen in the scaled variables, so the eigenvalues obey
``E_j(L, r) = E_j(1, rL) / L^2`` by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Literal

import numpy as np

ZERO_TOL = 1e-12
ROOT_RTOL = 1e-13
DEFAULT_WINDOW = 12

Parity = Literal["even", "odd"]
Sign = Literal["negative", "zero", "positive"]


class BracketError(RuntimeError):
    """A secular bracket did not contain a sign change."""


@dataclass(frozen=True)
class IntervalRobinSpec:
    """Half-length ``L`` and Robin parameter ``r`` of the interval problem."""

    L: float
    r: float

    def __post_init__(self) -> None:
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ValueError(f"L must be a positive finite number, got {self.L}")
        if not math.isfinite(self.r):
            raise ValueError(f"r must be finite, got {self.r}")

    @property
    def rho(self) -> float:
        return self.r * self.L


@dataclass(frozen=True)
class SecularRoot:
    parity: Parity
    index_within_parity: int
    eigenvalue: float
    wavenumber: float
    sign: Sign


@dataclass(frozen=True)
class EigenfunctionSample:
    t: float
    value: float


# -- scalar root finding ---------------------------------------------------


def _solve_bracketed(
    f: Callable[[float], float],
    df: Callable[[float], float],
    a: float,
    b: float,
    rtol: float = ROOT_RTOL,
) -> float:
    """Root of ``f`` in ``[a, b]`` by bisection-safeguarded Newton."""
    fa, fb = f(a), f(b)
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if fa * fb > 0:
        raise BracketError(f"no sign change on [{a}, {b}]: f={fa}, {fb}")
    # a few plain bisections first so Newton starts inside its basin
    for _ in range(8):
        m = 0.5 * (a + b)
        fm = f(m)
        if fm == 0.0:
            return m
        if (fm < 0) == (fa < 0):
            a, fa = m, fm
        else:
            b, fb = m, fm
    x = 0.5 * (a + b)
    for _ in range(200):
        fx = f(x)
        if fx == 0.0:
            return x
        if (fx < 0) == (fa < 0):
            a, fa = x, fx
        else:
            b, fb = x, fx
        d = df(x)
        step_ok = d != 0.0 and math.isfinite(d)
        xn = x - fx / d if step_ok else 0.5 * (a + b)
        if not (a < xn < b):
            xn = 0.5 * (a + b)
        if abs(xn - x) <= rtol * abs(xn) or b - a <= rtol * max(abs(a), abs(b)):
            return xn
        x = xn
    return x


def _xcothx_minus_one(x: float) -> float:
    # x coth x - 1, accurate for small x
    if x < 0.3:
        x2 = x * x
        return x2 * (1 / 3 - x2 * (1 / 45 - x2 * (2 / 945 - x2 / 4725)))
    return x / math.tanh(x) - 1.0


def _cos_minus_sinc(x: float, rho: float) -> float:
    # cos x - rho sin(x)/x, accurate when rho is close to 1 and x is small
    if x < 0.5:
        total = 1.0 - rho
        term_c = 1.0
        term_s = 1.0
        x2 = x * x
        for k in range(1, 12):
            term_c *= -x2 / ((2 * k - 1) * (2 * k))
            term_s *= -x2 / ((2 * k) * (2 * k + 1))
            total += term_c - rho * term_s
        return total
    return math.cos(x) - rho * math.sin(x) / x


def _root_even_negative(rho: float) -> float:
    f = lambda x: x * math.tanh(x) - rho
    df = lambda x: math.tanh(x) + x / math.cosh(x) ** 2 if x < 350 else 1.0
    return _solve_bracketed(f, df, 0.0, rho + 1.0)


def _root_odd_negative(rho: float) -> float:
    f = lambda x: _xcothx_minus_one(x) - (rho - 1.0)

    def df(x: float) -> float:
        if x < 1e-4:
            return 2 * x / 3
        if x > 350:
            return 1.0
        return 1.0 / math.tanh(x) - x / math.sinh(x) ** 2

    return _solve_bracketed(f, df, 0.0, rho)


def _root_even_positive(rho: float, n: int) -> float:
    """Root of ``x sin x + rho cos x`` in the n-th interval (n=0 is (0, pi/2))."""
    f = lambda x: x * math.sin(x) + rho * math.cos(x)
    df = lambda x: (1.0 - rho) * math.sin(x) + x * math.cos(x)
    if n == 0:
        return _solve_bracketed(f, df, 0.0, 0.5 * math.pi)
    return _solve_bracketed(f, df, (n - 0.5) * math.pi, (n + 0.5) * math.pi)


def _root_odd_positive(rho: float, n: int) -> float:
    """Root of ``x cos x - rho sin x`` in ``(n pi, (n+1) pi)``."""
    if n == 0:
        h = lambda x: _cos_minus_sinc(x, rho)

        def dh(x: float) -> float:
            if x < 1e-6:
                return -x * (1.0 - rho / 3.0)
            return -math.sin(x) - rho * (x * math.cos(x) - math.sin(x)) / (x * x)

        return _solve_bracketed(h, dh, 0.0, math.pi)
    f = lambda x: x * math.cos(x) - rho * math.sin(x)
    df = lambda x: (1.0 - rho) * math.cos(x) - x * math.sin(x)
    return _solve_bracketed(f, df, n * math.pi, (n + 1) * math.pi)


# -- enumeration -------------------------------------------------------------


def _branch_roots(rho: float, parity: Parity, count: int) -> list[tuple[Sign, float]]:
    """First ``count`` scaled roots ``(sign, x)`` of one parity, ascending."""
    out: list[tuple[Sign, float]] = []
    if parity == "even":
        if abs(rho) <= ZERO_TOL:
            out.append(("zero", 0.0))
        elif rho > 0:
            out.append(("negative", _root_even_negative(rho)))
        else:
            out.append(("positive", _root_even_positive(rho, 0)))
        n = 1
        while len(out) < count:
            out.append(("positive", _root_even_positive(0.0 if abs(rho) <= ZERO_TOL else rho, n)))
            n += 1
    else:
        if abs(rho - 1.0) <= ZERO_TOL:
            out.append(("zero", 0.0))
        elif rho > 1:
            out.append(("negative", _root_odd_negative(rho)))
        else:
            out.append(("positive", _root_odd_positive(rho, 0)))
        n = 1
        while len(out) < count:
            out.append(("positive", _root_odd_positive(1.0 if abs(rho - 1.0) <= ZERO_TOL else rho, n)))
            n += 1
    return out[:count]


def _scaled_value(sign: Sign, x: float) -> float:
    if sign == "negative":
        return -x * x
    if sign == "positive":
        return x * x
    return 0.0


@lru_cache(maxsize=4096)
def _scaled_roots(rho: float, window: int) -> tuple[tuple[Parity, int, Sign, float, float], ...]:
    """Merged roots for ``L = 1``: ``(parity, index, sign, x, E)`` ascending."""
    per = window // 2 + 1
    items = []
    for parity in ("even", "odd"):
        for i, (sign, x) in enumerate(_branch_roots(rho, parity, per), start=1):
            items.append((parity, i, sign, x, _scaled_value(sign, x)))
    # ties broken even-before-odd
    items.sort(key=lambda it: (it[4], 0 if it[0] == "even" else 1))
    return tuple(items[:window])


def secular_roots(spec: IntervalRobinSpec, count: int = DEFAULT_WINDOW) -> list[SecularRoot]:
    """The ``count`` lowest eigenvalues of the interval problem with bookkeeping."""
    if count < 1:
        raise ValueError("count must be >= 1")
    window = DEFAULT_WINDOW
    while window < count:
        window *= 2
    L = spec.L
    return [
        SecularRoot(parity, idx, e / (L * L), x / L, sign)
        for parity, idx, sign, x, e in _scaled_roots(float(spec.rho), window)[:count]
    ]


def _root(spec: IntervalRobinSpec, j: int) -> SecularRoot:
    if j < 1:
        raise ValueError(f"eigenvalue index must be >= 1, got {j}")
    return secular_roots(spec, j)[j - 1]


def interval_eigenvalue(spec: IntervalRobinSpec, j: int) -> float:
    """The j-th eigenvalue (1-based, nondecreasing order)."""
    return _root(spec, j).eigenvalue


def phi_of(x: float) -> float:
    """``(E_1 + x) / x^2`` for the unit half-length problem with parameter ``x``."""
    if not x > 0:
        raise ValueError(f"phi is defined for x > 0, got {x}")
    return (interval_eigenvalue(IntervalRobinSpec(1.0, x), 1) + x) / (x * x)


def second_remainder(x: float) -> float:
    """``(E_2 - pi^2/4 + 2x) / x^2`` for the unit half-length problem."""
    if not x > 0:
        raise ValueError(f"defined for x > 0, got {x}")
    return (interval_eigenvalue(IntervalRobinSpec(1.0, x), 2) - math.pi ** 2 / 4 + 2 * x) / (x * x)


# -- eigenfunctions ------------------------------------------------------------


def _odd_norm_series(y: float, sign: float) -> float:
    # (y -+ sin(2y)/2) / y^3 style remainders: sinh(2y)/2 - y or y - sin(2y)/2
    y2 = y * y
    return y * y2 * (2 / 3 + sign * y2 * (2 / 15 + sign * y2 * (4 / 315 + sign * y2 * 2 / 2835)))


def _eigenfunction_values(root: SecularRoot, L: float, t: np.ndarray) -> np.ndarray:
    k = root.wavenumber
    y = k * L
    if root.sign == "zero":
        if root.parity == "even":
            return np.full_like(t, 1.0 / math.sqrt(2 * L))
        return t / math.sqrt(2 * L ** 3 / 3)
    if root.sign == "negative":
        # scaled by exp(-kL) so large kL does not overflow
        ep = np.exp(k * (t - L))
        em = np.exp(-k * (t + L))
        e2 = math.exp(-2 * y)
        if root.parity == "even":
            n2 = L * e2 + (1 - e2 * e2) / (4 * k)
            return 0.5 * (ep + em) / math.sqrt(n2)
        if y < 0.1:
            n2 = _odd_norm_series(y, 1.0) / k
            return np.sinh(k * t) / math.sqrt(n2)
        n2 = (1 - e2 * e2) / (4 * k) - L * e2
        return 0.5 * (ep - em) / math.sqrt(n2)
    if root.parity == "even":
        n2 = L + math.sin(2 * y) / (2 * k)
        sgn = 1.0 if math.cos(y) >= 0 else -1.0
        return sgn * np.cos(k * t) / math.sqrt(n2)
    n2 = _odd_norm_series(y, -1.0) / k if y < 0.1 else L - math.sin(2 * y) / (2 * k)
    sgn = 1.0 if math.sin(y) >= 0 else -1.0
    return sgn * np.sin(k * t) / math.sqrt(n2)


def eigenfunction(spec: IntervalRobinSpec, j: int, t):
    """L2-normalized eigenfunction with ``Phi(L) >= 0``, evaluated at ``t``.

    Accepts a scalar or an array; returns the same kind.
    """
    arr = np.asarray(t, dtype=float)
    if np.any(np.abs(arr) > spec.L * (1 + 1e-14)):
        raise ValueError(f"t must satisfy |t| <= L = {spec.L}")
    vals = _eigenfunction_values(_root(spec, j), spec.L, np.atleast_1d(arr))
    return float(vals[0]) if arr.ndim == 0 else vals.reshape(arr.shape)


def sample_eigenfunction(spec: IntervalRobinSpec, j: int, n: int = 101) -> list[EigenfunctionSample]:
    ts = np.linspace(-spec.L, spec.L, n)
    return [EigenfunctionSample(float(a), float(b)) for a, b in zip(ts, eigenfunction(spec, j, ts))]


@lru_cache(maxsize=8)
def gauss_panels(a: float, b: float, panels: int = 64, points: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of composite Gauss-Legendre quadrature on ``[a, b]``."""
    x, w = np.polynomial.legendre.leggauss(points)
    edges = np.linspace(a, b, panels + 1)
    h = np.diff(edges)
    nodes = (edges[:-1, None] + 0.5 * h[:, None] * (x + 1)).ravel()
    weights = (0.5 * h[:, None] * w).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def _switch_point(j: int) -> float | None:
    # scaled parameter where eigenvalue j changes branch
    if j == 1:
        return 0.0
    if j == 2:
        return 1.0
    return None


def _check_branch(spec: IntervalRobinSpec, j: int, h: float) -> None:
    if not h > 0:
        raise ValueError("h must be positive")
    sw = _switch_point(j)
    if sw is None:
        return
    lo, hi = (spec.r - h) * spec.L, (spec.r + h) * spec.L
    if lo <= sw <= hi:
        raise ValueError(
            f"[r-h, r+h] = [{spec.r - h}, {spec.r + h}] crosses the branch switch at rL={sw}"
        )


def r_derivative(spec: IntervalRobinSpec, j: int, h: float, t: np.ndarray) -> np.ndarray:
    """Central difference of ``Phi_{j,L,r}`` in ``r`` at the points ``t``."""
    _check_branch(spec, j, h)
    up = eigenfunction(IntervalRobinSpec(spec.L, spec.r + h), j, t)
    dn = eigenfunction(IntervalRobinSpec(spec.L, spec.r - h), j, t)
    return (up - dn) / (2 * h)


def eigenfunction_r_derivative_norm(spec: IntervalRobinSpec, j: int, h: float) -> float:
    """Squared L2 norm of the central r-difference of the eigenfunction."""
    t, w = gauss_panels(-spec.L, spec.L)
    d = r_derivative(spec, j, h, t)
    return float(np.sum(w * d * d))


def product_s_derivative_norm(
    L: float, Lt: float, j: int, k: int, s: float, p: float, q: float, h: float = 1e-5
) -> float:
    """Squared L2 norm over the rectangle of ``d/ds [Phi_{j,L,s^p}(t1) Phi_{k,Lt,s^q}(t2)]``.

    The s-derivative is a central difference of step ``h``; the double
    integral uses the tensor product of the composite Gauss rules.
    """
    if s - h <= 0:
        raise ValueError("s - h must be positive")
    t1, w1 = gauss_panels(-L, L)
    t2, w2 = gauss_panels(-Lt, Lt)

    def prod(sv: float) -> np.ndarray:
        a = eigenfunction(IntervalRobinSpec(L, sv ** p), j, t1)
        b = eigenfunction(IntervalRobinSpec(Lt, sv ** q), k, t2)
        return np.outer(a, b)

    for idx, length, expo in ((j, L, p), (k, Lt, q)):
        sw = _switch_point(idx)
        if sw is not None and (s - h) ** expo * length <= sw <= (s + h) ** expo * length:
            raise ValueError(f"s-stencil crosses the branch switch of eigenfunction {idx}")
    d = (prod(s + h) - prod(s - h)) / (2 * h)
    return float(w1 @ (d * d) @ w2)


def derivative_constant_sweep(
    Ls=(0.1, 0.5, 1.0, 2.0), rs=None, j: int = 1, h: float = 1e-5
) -> dict:
    """Empirical supremum of ``|d_r Phi|^2 / L^2`` over a parameter sweep.

    The bounding constant is not explicit in the theory, so it is measured
    rather than asserted.
    """
    if rs is None:
        rs = np.linspace(0.05, 1.95, 20)
    worst = 0.0
    arg = None
    rows = []
    for L in Ls:
        for r in rs:
            spec = IntervalRobinSpec(float(L), float(r))
            try:
                v = eigenfunction_r_derivative_norm(spec, j, h)
            except ValueError:
                continue  # branch switch inside the difference stencil
            ratio = v / (L * L)
            rows.append((float(L), float(r), ratio))
            if ratio > worst:
                worst, arg = ratio, (float(L), float(r))
    return {"j": j, "sup_ratio": worst, "argmax": arg, "samples": rows}
