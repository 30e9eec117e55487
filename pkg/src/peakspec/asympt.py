"""Alpha sweeps of the peak problem and power-law diagnostics.

A sweep solves the exact form and both comparison forms for each coupling
constant and records the predicted leading term
``alpha^(2(q-1)/(2-q)) E_j(A_{0,1})``.  The helpers below fit power laws to the
records and check the two-sided remainder bounds and the lower bound
``E_1 >= -K alpha^(2(q-1)/(2-q))``.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import metric3d
from .eigensolve import SolverError
from .grid1d import reference_constant
from .metric3d import FormKind, PeakParams

log = logging.getLogger(__name__)

SLACK = 0.15


def leading_exponent(p: float, q: float) -> float:
    return 2 * (q - 1) / (2 - q)


def remainder_offsets(p: float, q: float) -> tuple[float, float]:
    """Exponent losses of the two remainder terms: ``p - 1`` and ``(q - p)/(2 - q)``."""
    return p - 1, (q - p) / (2 - q)


def sandwich_threshold(p: float, c: float) -> float:
    """Smallest alpha at which the lower comparison form is nondegenerate."""
    return c ** (1 / (p - 1))


@dataclass
class SweepRecord:
    alpha: float
    j: int
    e_exact: float
    e_minus: float
    e_plus: float
    e_model1d: float
    grid: dict
    residual_max: float
    converged: bool
    ratio: float = math.nan  # e_exact / alpha^(2(q-1)/(2-q))
    below_threshold: bool = False
    error: str | None = None

    @property
    def sandwich_holds(self) -> bool:
        return self.e_minus <= self.e_exact <= self.e_plus

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SweepSettings:
    n1: int = 24
    n2: int = 24
    ns: int = 96
    s_min_factor: float = 1e-3
    ratio: float = 1.1
    tip: str = "dirichlet"
    tol: float = 1e-8
    brackets: bool = True
    exact_kind: str = "exact_weighted"


def worker_count() -> int:
    env = os.environ.get("PEAKSPEC_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ValueError(f"PEAKSPEC_THREADS must be a positive integer, got {env!r}") from exc
        if n < 1:
            raise ValueError(f"PEAKSPEC_THREADS must be a positive integer, got {env!r}")
        return n
    return os.cpu_count() or 1


def _solve_alpha(params: PeakParams, j_max: int, settings: SweepSettings, reference: list[float]) -> list[SweepRecord]:
    grid = metric3d.make_grid(
        params, settings.n1, settings.n2, settings.ns,
        s_min=settings.s_min_factor * params.a, ratio=settings.ratio,
    )
    desc = grid.descriptor()
    scale = params.alpha ** leading_exponent(params.p, params.q)
    pred = [scale * e for e in reference]
    below = not params.bracket_feasible
    nan = [math.nan] * j_max
    try:
        exact = metric3d.solve_peak(params, grid, settings.exact_kind, j_max, tip=settings.tip, tol=settings.tol)
        results = [exact]
        minus = plus = nan
        if settings.brackets and not below:
            rm = metric3d.solve_peak(params, grid, FormKind.BRACKET_MINUS, j_max, tip=settings.tip, tol=settings.tol)
            rp = metric3d.solve_peak(params, grid, FormKind.BRACKET_PLUS, j_max, tip=settings.tip, tol=settings.tol)
            minus, plus = list(rm.values), list(rp.values)
            results += [rm, rp]
    except (SolverError, ValueError, np.linalg.LinAlgError) as exc:
        log.error("alpha=%g failed: %s", params.alpha, exc)
        return [
            SweepRecord(params.alpha, j + 1, math.nan, math.nan, math.nan, pred[j], dict(desc), math.nan,
                        False, math.nan, below, f"{type(exc).__name__}: {exc}")
            for j in range(j_max)
        ]
    records = []
    for j in range(j_max):
        res = max(float(r.relative_residuals[j]) for r in results)
        conv = all(bool(r.converged[j]) for r in results)
        e = float(exact.values[j])
        records.append(SweepRecord(
            params.alpha, j + 1, e, float(minus[j]), float(plus[j]), pred[j],
            dict(desc), res, conv, e / scale, below,
        ))
    log.info("alpha=%g done: E=%s", params.alpha, [r.e_exact for r in records])
    return records


def sweep(
    params_base: PeakParams,
    alphas: Sequence[float],
    j_max: int = 3,
    settings: SweepSettings | None = None,
    *,
    workers: int | None = None,
) -> list[SweepRecord]:
    """Solve the exact and comparison forms for every alpha.

    When ``params_base.c_bracket`` is unset, one comparison constant feasible
    for the whole list is chosen.  Jobs run on a process pool whose size
    comes from ``PEAKSPEC_THREADS`` (serially when it is 1).
    """
    alphas = [float(a) for a in alphas]
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alphas must be strictly ascending")
    if any(a < 1 for a in alphas):
        raise ValueError("alphas must be >= 1")
    if j_max < 1:
        raise ValueError("j_max must be positive")
    settings = settings or SweepSettings()
    c = params_base.c_bracket
    if c is None:
        c = metric3d.feasible_bracket_constant(
            params_base.p, params_base.q, params_base.a, [a for a in alphas if a >= 4] or alphas
        )
    reference = [reference_constant(params_base.p, params_base.q, j) for j in range(1, j_max + 1)]
    jobs = [PeakParams(params_base.p, params_base.q, params_base.a, a, c) for a in alphas]
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) == 1:
        chunks = [_solve_alpha(pp, j_max, settings, reference) for pp in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            futures = [pool.submit(_solve_alpha, pp, j_max, settings, reference) for pp in jobs]
            chunks = [f.result() for f in futures]
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=lambda r: (r.alpha, r.j))
    return records


# -- sandwich ----------------------------------------------------------------------------


@dataclass
class SandwichSummary:
    threshold: float
    checked: int
    violations: list[tuple[float, int]]
    skipped: list[tuple[float, int]]

    @property
    def passed(self) -> bool:
        return not self.violations and self.checked > 0


def sandwich_summary(records: Sequence[SweepRecord], p: float, c: float) -> SandwichSummary:
    thr = sandwich_threshold(p, c)
    checked, bad, skipped = 0, [], []
    for r in records:
        if r.alpha < thr or r.below_threshold or math.isnan(r.e_minus):
            skipped.append((r.alpha, r.j))
            continue
        checked += 1
        if not r.sandwich_holds:
            bad.append((r.alpha, r.j))
    return SandwichSummary(thr, checked, bad, skipped)


# -- power-law fits ----------------------------------------------------------------------


class FitError(ValueError):
    """The data cannot be fitted (too few points or sign changes)."""


@dataclass
class PowerLawFit:
    exponent: float
    coefficient: float
    r_squared: float
    window: tuple[float, float]
    points: int = 0


def default_window(alphas: Sequence[float], minimum: int = 4) -> tuple[float, float]:
    """The upper half of the alpha list, widened to at least ``minimum`` points."""
    al = sorted(set(alphas))
    n = max(minimum, math.ceil(len(al) / 2))
    sub = al[-n:]
    return sub[0], sub[-1]


def power_law_fit(alphas: Sequence[float], values: Sequence[float], minimum: int = 4) -> PowerLawFit:
    """Least-squares fit of ``log|value|`` against ``log alpha`` with the sign restored."""
    x = np.asarray(alphas, dtype=float)
    y = np.asarray(values, dtype=float)
    if x.size < minimum:
        raise FitError(f"need at least {minimum} points, got {x.size}")
    if not (np.all(y > 0) or np.all(y < 0)):
        raise FitError("values change sign or vanish inside the window")
    lx, ly = np.log(x), np.log(np.abs(y))
    A = np.column_stack([lx, np.ones_like(lx)])
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    fitted = A @ np.array([slope, icpt])
    ss_res = float(np.sum((ly - fitted) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else min(1.0, max(0.0, 1 - ss_res / ss_tot))
    return PowerLawFit(float(slope), float(np.sign(y[0]) * math.exp(icpt)), r2, (float(x.min()), float(x.max())), int(x.size))


def _select(records, j, window):
    recs = [r for r in records if r.j == j and r.converged and not math.isnan(r.e_exact)]
    if window is None:
        window = default_window([r.alpha for r in recs])
    lo, hi = window
    return [r for r in recs if lo <= r.alpha <= hi]


def fit_leading(records: Sequence[SweepRecord], j: int = 1, window: tuple[float, float] | None = None) -> PowerLawFit:
    """Power-law fit of ``E_j`` over the largest alphas."""
    recs = _select(records, j, window)
    return power_law_fit([r.alpha for r in recs], [r.e_exact for r in recs])


@dataclass
class CorrectionFit:
    fit: PowerLawFit | None
    bound_exponent: float
    within_bound: bool | None
    status: str


def fit_correction(
    records: Sequence[SweepRecord],
    j: int,
    leading: PowerLawFit,
    *,
    p: float,
    q: float,
    target_exponent: float | None = None,
    window: tuple[float, float] | None = None,
    slack: float = SLACK,
    floor: float = 1e-9,
) -> CorrectionFit:
    """Fit ``e - coefficient alpha^target`` to a power law.

    The remainder may decay at most like ``alpha^(target - min(p-1, (q-p)/(2-q)))``
    (plus ``slack``).  If the remainder changes sign or sits below ``floor``
    relative to ``e`` the fit is reported as unresolved.
    """
    target = leading_exponent(p, q) if target_exponent is None else target_exponent
    bound = target - min(remainder_offsets(p, q)) + slack
    recs = _select(records, j, window)
    al = np.array([r.alpha for r in recs])
    e = np.array([r.e_exact for r in recs])
    rem = e - leading.coefficient * al ** target
    if np.any(np.abs(rem) <= floor * np.abs(e)):
        return CorrectionFit(None, bound, None, "remainder unresolved: below numeric floor")
    try:
        fit = power_law_fit(al, rem)
    except FitError as exc:
        return CorrectionFit(None, bound, None, f"remainder unresolved: {exc}")
    ok = fit.exponent <= bound
    return CorrectionFit(fit, bound, ok, "consistent" if ok else "exceeds bound")


# -- lower bound and remainder constants -------------------------------------------------


@dataclass
class SemiboundReport:
    K: float
    checked: list[float]
    violations: list[float]
    skipped: list[float]
    notice: str = ""

    @property
    def passed(self) -> bool:
        return not self.violations


def semibound_check(
    records: Sequence[SweepRecord], *, p: float, q: float, K: float | None = None, threshold: float = 1.0
) -> SemiboundReport:
    """Check ``E_1 >= -K alpha^(2(q-1)/(2-q))`` with ``K = 2 |E_1(A_{0,1})|`` by default."""
    if not records:
        raise ValueError("no records to check")
    K = 2 * abs(reference_constant(p, q, 1)) if K is None else K
    tau = leading_exponent(p, q)
    checked, bad, skipped = [], [], []
    for r in records:
        if r.j != 1:
            continue
        if r.alpha < threshold:
            skipped.append(r.alpha)
            continue
        checked.append(r.alpha)
        if not r.e_exact >= -K * r.alpha ** tau:
            bad.append(r.alpha)
    notice = f"skipped alpha < {threshold:g}: {skipped}" if skipped else ""
    return SemiboundReport(K, checked, bad, skipped, notice)


@dataclass
class RemainderConstants:
    upper: list[float]
    lower: list[float]
    alphas: list[float]
    upper_stable: bool
    lower_stable: bool


def _stable(vals: Sequence[float], band: float) -> bool:
    v = np.asarray(vals, dtype=float)
    if v.size == 0 or np.any(~np.isfinite(v)):
        return False
    m = float(np.mean(v))
    return bool(np.all(np.abs(v - m) <= band * abs(m))) if m != 0 else bool(np.all(v == 0))


def remainder_constants(
    records: Sequence[SweepRecord], j: int, *, p: float, q: float,
    window: tuple[float, float] | None = None, band: float = 0.2,
) -> RemainderConstants:
    """Per-alpha constants of the two-sided remainder bound.

    ``C = (e - pred) / alpha^(tau - (p-1))`` and
    ``C~ = (pred - e) / (alpha^(tau - (p-1)) + alpha^(tau - (q-p)/(2-q)))``;
    each list is called stable when all entries lie within ``band`` of
    their mean.
    """
    tau = leading_exponent(p, q)
    o1, o2 = remainder_offsets(p, q)
    recs = _select(records, j, window)
    up, lo = [], []
    for r in recs:
        d = r.e_exact - r.e_model1d
        up.append(d / r.alpha ** (tau - o1))
        lo.append(-d / (r.alpha ** (tau - o1) + r.alpha ** (tau - o2)))
    return RemainderConstants(up, lo, [r.alpha for r in recs], _stable(up, band), _stable(lo, band))


def ratio_gaps(records: Sequence[SweepRecord], j: int, reference: float) -> list[tuple[float, float]]:
    """``|ratio - E_j(A_{0,1})|`` along the sweep."""
    return [(r.alpha, abs(r.ratio - reference)) for r in records if r.j == j]


def gaps_decreasing(gaps: Sequence[tuple[float, float]]) -> bool:
    vals = [g for _, g in gaps]
    return all(b < a for a, b in zip(vals, vals[1:]))


@dataclass
class FitReport:
    leading: PowerLawFit | None
    correction: CorrectionFit | None
    reference: float
    exponent_target: float
    exponent_ok: bool
    coefficient_ok: bool
    notes: list[str] = field(default_factory=list)


def fit_report(records: Sequence[SweepRecord], j: int, *, p: float, q: float,
               window: tuple[float, float] | None = None) -> FitReport:
    """Leading and remainder fits with the 5% exponent and 10% coefficient checks."""
    ref = reference_constant(p, q, j)
    tau = leading_exponent(p, q)
    notes = []
    try:
        lead = fit_leading(records, j, window)
    except FitError as exc:
        return FitReport(None, None, ref, tau, False, False, [str(exc)])
    corr = fit_correction(records, j, PowerLawFit(tau, ref, 1.0, lead.window), p=p, q=q, window=window)
    notes.append(corr.status)
    return FitReport(
        lead, corr, ref, tau,
        abs(lead.exponent - tau) <= 0.05 * abs(tau),
        abs(lead.coefficient - ref) <= 0.10 * abs(ref),
        notes,
    )
