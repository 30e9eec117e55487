"""Graded-grid finite elements for the 1D model Schrodinger operators.

The model operator acts on the half line as

    -f'' + (g / (4 s^2) - c1 / s^p - c2 / s^q) f,   g = (p+q)^2 - 2(p+q),

realized through its quadratic form (Friedrichs extension).  The half line
is truncated to ``(s_min, s_max)`` with Dirichlet ends and discretized by
linear elements on a grid that is geometric near ``s_min`` and uniform past
the bottom of the potential well.

The module also hosts the second-order finite-difference discretization of
the interval Robin Laplacian that serves as an independent oracle for the
closed-form secular solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .eigensolve import tridiag_smallest
from .pencil import OperatorPencil

GAUSS4 = np.polynomial.legendre.leggauss(4)


@dataclass(frozen=True)
class ModelPotentialSpec:
    """Coefficients of the model potential."""

    c1: float
    c2: float
    p: float = 1.2
    q: float = 1.5

    def __post_init__(self) -> None:
        if not 1 < self.p < self.q < 2:
            raise ValueError(f"need 1 < p < q < 2, got p={self.p}, q={self.q}")
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError(f"c1, c2 must be nonnegative, got {self.c1}, {self.c2}")

    @property
    def g(self) -> float:
        """Coefficient of the repulsive ``1/(4 s^2)`` term."""
        pq = self.p + self.q
        return pq * pq - 2 * pq

    def potential(self, s: np.ndarray) -> np.ndarray:
        return self.g / (4 * s * s) - self.c1 * s ** (-self.p) - self.c2 * s ** (-self.q)

    @property
    def length_scale(self) -> float:
        """Width of the well: ``c2^(-1/(2-q))``, or the ``c1`` analogue when ``c2 = 0``."""
        if self.c2 > 0:
            return self.c2 ** (-1.0 / (2 - self.q))
        if self.c1 > 0:
            return self.c1 ** (-1.0 / (2 - self.p))
        raise ValueError("c1 + c2 > 0 is required for a well length scale")

    @property
    def well_bottom(self) -> float:
        """Minimizer of the potential keeping only the dominant attractive term."""
        if self.c2 > 0:
            return (self.g / (2 * self.q * self.c2)) ** (1.0 / (2 - self.q))
        return (self.g / (2 * self.p * self.c1)) ** (1.0 / (2 - self.p))

    def scaled(self, c: float) -> ModelPotentialSpec:
        """Coefficients of the unitarily equivalent operator after ``s -> c s``."""
        return ModelPotentialSpec(
            self.c1 * c ** (self.p - 2), self.c2 * c ** (self.q - 2), self.p, self.q
        )


@dataclass(frozen=True)
class Grid1D:
    nodes: np.ndarray
    grading: str = "geometric"
    ratio: float = 1.12

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 3:
            raise ValueError("a grid needs at least three nodes")
        if nodes[0] <= 0:
            raise ValueError("grid must start at s_min > 0")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if self.grading not in ("geometric", "uniform"):
            raise ValueError(f"unknown grading {self.grading!r}")
        if self.grading == "geometric" and not 1 < self.ratio <= 1.5:
            raise ValueError(f"geometric ratio must lie in (1, 1.5], got {self.ratio}")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def s_min(self) -> float:
        return float(self.nodes[0])

    @property
    def s_max(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_cells(self) -> int:
        return self.nodes.size - 1

    @property
    def grid_id(self) -> str:
        return f"{self.grading}[{self.s_min:.3e},{self.s_max:.3e}]x{self.n_cells}"

    def index_of(self, b: float, rtol: float = 1e-12) -> int:
        i = int(np.argmin(np.abs(self.nodes - b)))
        if abs(self.nodes[i] - b) > rtol * max(1.0, abs(b)):
            raise ValueError(f"b={b} is not a node of grid {self.grid_id}")
        return i


@dataclass(frozen=True)
class Domain:
    """Which part of the grid carries the operator: full, ``(s_min, b)`` or ``(b, s_max)``."""

    kind: str = "full"
    b: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("full", "inner", "outer"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind != "full" and (self.b is None or not self.b > 0):
            raise ValueError(f"domain {self.kind} needs a positive cut point b")

    @classmethod
    def full(cls) -> Domain:
        return cls("full")

    @classmethod
    def inner(cls, b: float) -> Domain:
        return cls("inner", float(b))

    @classmethod
    def outer(cls, b: float) -> Domain:
        return cls("outer", float(b))


# -- grids -------------------------------------------------------------------


def graded_nodes(
    s_min: float,
    s_max: float,
    ratio: float = 1.12,
    h_max: float | None = None,
    s_turn: float | None = None,
    breakpoints: tuple[float, ...] = (),
) -> np.ndarray:
    """Geometric cells from ``s_min`` up to ``s_turn``, then uniform cells.

    The geometric part starts with a cell of width ``s_min (ratio - 1)``
    and stops growing at ``s_turn`` or once the width reaches ``h_max``.
    ``breakpoints`` are inserted as nodes so that domains may be cut there.
    """
    if not 0 < s_min < s_max:
        raise ValueError("need 0 < s_min < s_max")
    h_max = h_max if h_max is not None else (s_max - s_min) / 64
    s_turn = s_turn if s_turn is not None else s_max
    nodes = [s_min]
    h = s_min * (ratio - 1)
    while nodes[-1] < min(s_turn, s_max) and h < h_max:
        nodes.append(nodes[-1] + h)
        h *= ratio
    start = min(nodes[-1], s_max)
    if start >= s_max:
        nodes[-1] = s_max
        out = np.array(nodes)
    else:
        m = max(1, math.ceil((s_max - start) / min(h, h_max)))
        out = np.concatenate([nodes[:-1], np.linspace(start, s_max, m + 1)])
    for b in breakpoints:
        if not s_min < b < s_max:
            raise ValueError(f"breakpoint {b} outside ({s_min}, {s_max})")
        i = int(np.searchsorted(out, b))
        near = min(abs(out[i - 1] - b), abs(out[min(i, out.size - 1)] - b))
        cell = out[i] - out[i - 1]
        if near <= 0.25 * cell:
            # move the nearest node rather than create a sliver cell
            j = i - 1 if abs(out[i - 1] - b) <= abs(out[i] - b) else i
            if 0 < j < out.size - 1:
                out[j] = b
                continue
        out = np.insert(out, i, b)
    return out


def default_grid(
    spec: ModelPotentialSpec,
    *,
    ratio: float = 1.12,
    s_min_factor: float = 1e-4,
    s_max_factor: float = 60.0,
    cells_per_scale: float = 20.0,
    s_max: float | None = None,
    breakpoints: tuple[float, ...] = (),
) -> Grid1D:
    """Grid adapted to the well of ``spec``.

    ``s_min = s_min_factor * l`` and ``s_max = s_max_factor * l`` where ``l``
    is the well length scale; the uniform cell width is ``l / cells_per_scale``.
    """
    ell = spec.length_scale
    top = s_max if s_max is not None else s_max_factor * ell
    nodes = graded_nodes(
        s_min_factor * ell,
        top,
        ratio=ratio,
        h_max=ell / cells_per_scale,
        s_turn=spec.well_bottom,
        breakpoints=breakpoints,
    )
    return Grid1D(nodes, "geometric", ratio)


def refine(grid: Grid1D) -> Grid1D:
    """Halve every cell (nested refinement)."""
    mids = 0.5 * (grid.nodes[:-1] + grid.nodes[1:])
    nodes = np.empty(2 * grid.nodes.size - 1)
    nodes[0::2] = grid.nodes
    nodes[1::2] = mids
    return Grid1D(nodes, grid.grading, grid.ratio)


def scale_grid(grid: Grid1D, c: float) -> Grid1D:
    """Grid with every node multiplied by ``c``."""
    return Grid1D(grid.nodes * c, grid.grading, grid.ratio)


# -- assembly ----------------------------------------------------------------


def assemble_fe(
    nodes: np.ndarray, potential: Callable[[np.ndarray], np.ndarray], grid_id: str = "fe"
) -> OperatorPencil:
    """Linear elements for ``int |f'|^2 + V f^2`` with Dirichlet ends.

    The potential is integrated by 4-point Gauss per cell.  Only interior
    nodes carry unknowns.
    """
    x = np.asarray(nodes, dtype=float)
    h = np.diff(x)
    if np.any(h <= 0):
        raise ValueError("degenerate cell")
    gx, gw = GAUSS4
    xi = 0.5 * (gx + 1)
    qp = x[:-1, None] + h[:, None] * xi
    qw = 0.5 * h[:, None] * gw
    V = potential(qp) * qw
    b0 = 1 - xi
    b1 = xi
    n = x.size
    kd = np.zeros(n)
    md = np.zeros(n)
    kd[:-1] += 1 / h + V @ (b0 * b0)
    kd[1:] += 1 / h + V @ (b1 * b1)
    ko = -1 / h + V @ (b0 * b1)
    md[:-1] += h / 3
    md[1:] += h / 3
    mo = h / 6
    kd, md = kd[1:-1], md[1:-1]
    ko, mo = ko[1:-1], mo[1:-1]
    if np.any(md <= 0):
        raise ValueError("nonpositive mass diagonal")
    K = sp.diags([ko, kd, ko], [-1, 0, 1], format="csr")
    M = sp.diags([mo, md, mo], [-1, 0, 1], format="csr")
    return OperatorPencil(K, M, grid_id, ("dirichlet", "dirichlet"), meta={"nodes": x})


def _sub_nodes(grid: Grid1D, domain: Domain) -> np.ndarray:
    if domain.kind == "full":
        return grid.nodes
    i = grid.index_of(domain.b)
    if domain.kind == "inner":
        if i < 2:
            raise ValueError("inner domain has no interior nodes")
        return grid.nodes[: i + 1]
    if i > grid.nodes.size - 3:
        raise ValueError("outer domain has no interior nodes")
    return grid.nodes[i:]


def assemble_model(
    spec: ModelPotentialSpec, grid: Grid1D, domain: Domain | None = None
) -> OperatorPencil:
    """Finite-element pencil of the model operator on the chosen domain."""
    domain = domain or Domain.full()
    nodes = _sub_nodes(grid, domain)
    tag = domain.kind if domain.b is None else f"{domain.kind}({domain.b:g})"
    return assemble_fe(nodes, spec.potential, f"{grid.grid_id}/{tag}")


def model_eigenvalues(
    spec: ModelPotentialSpec, grid: Grid1D, domain: Domain | None = None, j_max: int = 5
) -> list[float]:
    """Ascending ``j_max`` lowest eigenvalues of the discrete model operator."""
    pencil = assemble_model(spec, grid, domain)
    if j_max > pencil.dim:
        raise ValueError(f"j_max={j_max} exceeds the {pencil.dim} unknowns")
    return tridiag_smallest(pencil, j_max, vectors=False).values.tolist()


@dataclass(frozen=True)
class ReferenceValues:
    """Richardson-extrapolated eigenvalues over nested grids."""

    values: tuple[float, ...]
    raw: tuple[tuple[float, ...], ...]
    extrapolated: tuple[tuple[float, ...], ...]
    agreement: tuple[float, ...]
    sizes: tuple[int, ...]


def richardson(raw: np.ndarray, factor: float = 4.0) -> np.ndarray:
    """One Richardson step for second-order data ``raw[level, j]``."""
    return (factor * raw[1:] - raw[:-1]) / (factor - 1)


@lru_cache(maxsize=64)
def _reference(c1, c2, p, q, j_max, levels, ratio, s_min_factor, s_max_factor, cells_per_scale):
    spec = ModelPotentialSpec(c1, c2, p, q)
    grid = default_grid(
        spec, ratio=ratio, s_min_factor=s_min_factor, s_max_factor=s_max_factor,
        cells_per_scale=cells_per_scale,
    )
    raw, sizes = [], []
    for _ in range(levels):
        raw.append(model_eigenvalues(spec, grid, None, j_max))
        sizes.append(grid.n_cells)
        grid = refine(grid)
    raw_a = np.array(raw)
    ext = richardson(raw_a)
    agree = np.abs(ext[-1] - ext[-2]) if ext.shape[0] > 1 else np.full(j_max, np.nan)
    return ReferenceValues(
        values=tuple(ext[-1].tolist()),
        raw=tuple(tuple(r) for r in raw_a.tolist()),
        extrapolated=tuple(tuple(r) for r in ext.tolist()),
        agreement=tuple(agree.tolist()),
        sizes=tuple(sizes),
    )


def reference_eigenvalues(
    spec: ModelPotentialSpec,
    j_max: int = 3,
    *,
    levels: int = 3,
    ratio: float = 1.12,
    s_min_factor: float = 1e-7,
    s_max_factor: float = 2000.0,
    cells_per_scale: float = 20.0,
) -> ReferenceValues:
    """Continuum estimates of the lowest eigenvalues by nested refinement.

    ``levels`` grids are built by halving; each neighbouring pair yields a
    Richardson estimate with factor 4 and the finest one is returned.  The
    box is much longer than the working default because the excited states
    of the ``-1/s^q`` tail reach far out (at ``60`` well lengths the second
    eigenvalue is still off by a quarter), and it starts much closer to 0:
    the Dirichlet cut at ``1e-4`` well lengths shifts ``E_1`` by about
    ``2e-6`` relative, which refinement cannot remove.
    """
    return _reference(
        float(spec.c1), float(spec.c2), float(spec.p), float(spec.q),
        int(j_max), int(levels), float(ratio), float(s_min_factor), float(s_max_factor),
        float(cells_per_scale),
    )


def reference_constant(p: float = 1.2, q: float = 1.5, j: int = 1) -> float:
    """Continuum estimate of ``E_j`` for ``c1 = 0, c2 = 1``."""
    return reference_eigenvalues(ModelPotentialSpec(0.0, 1.0, p, q), max(3, j)).values[j - 1]


# -- Hardy quotient ------------------------------------------------------------


def hardy_quotient(grid: Grid1D, coefficients: np.ndarray) -> float:
    """``int |f'|^2 / int f^2 / (4 s^2)`` for the piecewise linear interpolant."""
    f = np.asarray(coefficients, dtype=float)
    x = grid.nodes
    if f.shape != x.shape:
        raise ValueError("need one coefficient per grid node")
    if f[0] != 0 or f[-1] != 0:
        raise ValueError("coefficients must vanish at both grid ends")
    h = np.diff(x)
    num = np.sum(np.diff(f) ** 2 / h)
    gx, gw = GAUSS4
    xi = 0.5 * (gx + 1)
    qp = x[:-1, None] + h[:, None] * xi
    fq = f[:-1, None] * (1 - xi) + f[1:, None] * xi
    den = np.sum(0.5 * h[:, None] * gw * fq * fq / (4 * qp * qp))
    if den == 0:
        raise ZeroDivisionError("zero Hardy denominator")
    return float(num / den)


# -- localization (IMS) check --------------------------------------------------


def smoothstep5(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x * x * x * (10 - 15 * x + 6 * x * x)


def ims_cutoffs(b: float):
    """Complementary cutoffs ``chi1 = cos(theta)``, ``chi2 = sin(theta)``.

    ``theta`` rises from 0 to pi/2 over ``[b/2, 3b/4]`` along a quintic
    smoothstep, so ``chi1^2 + chi2^2 = 1`` exactly, ``chi1 = 0`` past ``3b/4``
    and ``chi2 = 0`` before ``b/2``.  Returns ``(chi1, chi2, dchi1, dchi2)``.
    """
    lo, w = 0.5 * b, 0.25 * b

    def theta(s):
        return 0.5 * np.pi * smoothstep5((np.asarray(s) - lo) / w)

    def dtheta(s):
        x = np.clip((np.asarray(s) - lo) / w, 0.0, 1.0)
        return 0.5 * np.pi * 30 * x * x * (1 - x) ** 2 / w

    return (
        lambda s: np.cos(theta(s)),
        lambda s: np.sin(theta(s)),
        lambda s: -np.sin(theta(s)) * dtheta(s),
        lambda s: np.cos(theta(s)) * dtheta(s),
    )


def ims_constant(b: float, samples: int = 200001) -> float:
    """``K = |chi1'|_inf^2 + |chi2'|_inf^2`` for the quintic cutoffs."""
    _, _, d1, d2 = ims_cutoffs(b)
    s = np.linspace(0.5 * b, 0.75 * b, samples)
    return float(np.max(np.abs(d1(s))) ** 2 + np.max(np.abs(d2(s))) ** 2)


def ims_constant_bound(b: float) -> float:
    """Closed-form upper bound ``2 (pi/2 * 15/8 / (b/4))^2`` on ``K``."""
    return 2 * (0.5 * math.pi * 15 / 8 / (0.25 * b)) ** 2


@dataclass
class IMSReport:
    alpha: float
    b: float
    K: float
    inner: list[float]
    full: list[float]
    outer_lowest: float
    outer_bound: float
    passed: list[bool] = field(default_factory=list)
    separated: bool = False

    @property
    def all_passed(self) -> bool:
        return all(self.passed)


def ims_inequality_check(
    p: float,
    q: float,
    alpha: float,
    b: float,
    j_max: int = 3,
    *,
    alpha0: float = 4.0,
    cells_per_scale: float = 20.0,
) -> IMSReport:
    """Compare the truncated operator on ``(0, b)`` with the full one plus ``K``.

    Also records the lowest eigenvalue of the outer piece on ``(b/4, inf)``
    and whether it exceeds ``E_j + K`` (the separation used in the argument).
    """
    if alpha < alpha0:
        raise ValueError(f"alpha={alpha} below the configured threshold {alpha0}")
    spec = ModelPotentialSpec(alpha ** (p - 1), alpha ** (q - 1), p, q)
    ell = spec.length_scale
    top = max(60 * ell, 4 * b)
    grid = default_grid(
        spec, s_max=top, cells_per_scale=cells_per_scale, breakpoints=(0.25 * b, b)
    )
    inner = model_eigenvalues(spec, grid, Domain.inner(b), j_max)
    full = model_eigenvalues(spec, grid, Domain.full(), j_max)
    outer = model_eigenvalues(spec, grid, Domain.outer(0.25 * b), 1)[0]
    K = ims_constant(b)
    bound = outer_domain_bound(p, q, alpha, b)
    rep = IMSReport(alpha, b, K, inner, full, outer, bound)
    rep.passed = [mi <= fi + K for mi, fi in zip(inner, full)]
    rep.separated = full[-1] + K < outer
    return rep


def outer_domain_bound(p: float, q: float, alpha: float, b: float) -> float:
    """Lower bound ``-(4^p/b^p) alpha^(p-1) - (4^q/b^q) alpha^(q-1)`` on ``(b/4, inf)``."""
    return -(4 ** p / b ** p) * alpha ** (p - 1) - (4 ** q / b ** q) * alpha ** (q - 1)


def ims_threshold(p: float, q: float, b: float, alphas, j_max: int = 3) -> float | None:
    """Smallest ``alpha`` in ``alphas`` from which the check passes and stays passing."""
    ok = [ims_inequality_check(p, q, a, b, j_max, alpha0=0.0).all_passed for a in alphas]
    thr = None
    for a, good in zip(reversed(list(alphas)), reversed(ok)):
        if not good:
            break
        thr = a
    return thr


# -- finite-difference oracle for the interval Robin problem -------------------


def robin_fd_pencil(L: float, r: float, n: int) -> OperatorPencil:
    """Second-order finite differences for ``-f''`` on ``(-L, L)`` with Robin ends.

    ``n`` cells, ghost-point boundary closure; the boundary rows are halved
    so that the pencil is symmetric with a diagonal (lumped) mass.
    """
    if n < 2:
        raise ValueError("need at least two cells")
    h = 2 * L / n
    N = n + 1
    kd = np.full(N, 2.0 / h ** 2)
    ko = np.full(N - 1, -1.0 / h ** 2)
    kd[0] = kd[-1] = (1.0 - h * r) / h ** 2
    md = np.ones(N)
    md[0] = md[-1] = 0.5
    K = sp.diags([ko, kd, ko], [-1, 0, 1], format="csr")
    M = sp.diags(md, 0, format="csr")
    return OperatorPencil(K, M, f"robin-fd[L={L:g},r={r:g},n={n}]", ("robin", "robin"))


def robin_fd_reference(
    L: float, r: float, j_max: int = 4, *, n0: int = 40, levels: int = 5
) -> np.ndarray:
    """Richardson-extrapolated finite-difference eigenvalues (a full table).

    The error expansion is in even powers of the mesh width, so level ``m``
    of the table eliminates ``h^(2m)``.
    """
    table = []
    n = n0
    for _ in range(levels):
        table.append(tridiag_smallest(robin_fd_pencil(L, r, n), j_max, vectors=False).values)
        n *= 2
    T = np.array(table)
    m = 1
    while T.shape[0] > 1:
        f = 4.0 ** m
        T = (f * T[1:] - T[:-1]) / (f - 1)
        m += 1
    return T[0]
