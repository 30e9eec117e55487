"""Finite elements for the Robin peak problem in straightened coordinates.

The map ``X(t1, t2, s) = (s^p t1, s^q t2, s)`` sends the box
``(-l1, l1) x (-l2, l2) x (0, a)`` with ``l1 = alpha^(1-p)``, ``l2 = alpha^(1-q)``
onto the truncated peak.  The Dirichlet energy becomes

    int <grad u, G grad u> s^(p+q),    G = (DX^T DX)^(-1),

and the Robin term lives on the four lateral faces with the surface
weights ``s^q sqrt(p^2 alpha^(2-2p) s^(2p-2) + 1)`` (faces ``t1 = +-l1``) and
``s^p sqrt(q^2 alpha^(2-2q) s^(2q-2) + 1)`` (faces ``t2 = +-l2``).

Four quadratic forms are assembled on one trilinear tensor grid:

* ``exact_weighted``: the form above with mass ``int u^2 s^(p+q)``;
* ``exact_flat``: the same form after ``u = s^(-(p+q)/2) w``, with plain mass;
* ``bracket_minus`` / ``bracket_plus``: the separable comparison forms
  ``(1 -+ c alpha^(1-p)) [s^(-2p)|d1 w|^2 + s^(-2q)|d2 w|^2 + |ds w|^2
  + g/(4 s^2) w^2]`` minus ``s^(-p)`` and ``s^(-q)`` face terms.

Unknowns are ordered with ``s`` slowest, then ``t1``, then ``t2``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .eigensolve import EigenResult, sparse_smallest, tridiag_smallest
from .grid1d import ModelPotentialSpec, assemble_fe
from .pencil import OperatorPencil

log = logging.getLogger(__name__)

GAUSS3 = np.polynomial.legendre.leggauss(3)


class FormKind(str, Enum):
    EXACT_WEIGHTED = "exact_weighted"
    EXACT_FLAT = "exact_flat"
    BRACKET_MINUS = "bracket_minus"
    BRACKET_PLUS = "bracket_plus"

    @property
    def is_bracket(self) -> bool:
        return self in (FormKind.BRACKET_MINUS, FormKind.BRACKET_PLUS)


class FeasibilityError(ValueError):
    """The comparison constant makes the lower bracket degenerate."""


@dataclass(frozen=True)
class PeakParams:
    """Geometry and coupling of the straightened peak problem."""

    p: float = 1.2
    q: float = 1.5
    a: float = 0.5
    alpha: float = 16.0
    c_bracket: float | None = None

    def __post_init__(self) -> None:
        if not 1 < self.p < self.q < 2:
            raise ValueError(f"need 1 < p < q < 2, got p={self.p}, q={self.q}")
        if not 0 < self.a < 1:
            raise ValueError(f"need 0 < a < 1, got a={self.a}")
        if not self.alpha >= 1:
            raise ValueError(f"need alpha >= 1, got {self.alpha}")
        if self.c_bracket is not None and not self.c_bracket > 0:
            raise ValueError(f"c_bracket must be positive, got {self.c_bracket}")

    @property
    def l1(self) -> float:
        return self.alpha ** (1 - self.p)

    @property
    def l2(self) -> float:
        return self.alpha ** (1 - self.q)

    @property
    def gamma(self) -> float:
        return 0.5 * (self.p + self.q)

    @property
    def g(self) -> float:
        pq = self.p + self.q
        return pq * pq - 2 * pq

    @property
    def c(self) -> float:
        """The comparison constant, defaulting to the feasible choice for this alpha."""
        if self.c_bracket is not None:
            return self.c_bracket
        return feasible_bracket_constant(self.p, self.q, self.a, [self.alpha])

    @property
    def bracket_feasible(self) -> bool:
        return self.c * self.l1 < 1

    def factor(self, kind: FormKind) -> float:
        if kind == FormKind.BRACKET_MINUS:
            return 1 - self.c * self.l1
        if kind == FormKind.BRACKET_PLUS:
            return 1 + self.c * self.l1
        return 1.0

    @property
    def leading_exponent(self) -> float:
        return 2 * (self.q - 1) / (2 - self.q)

    def with_alpha(self, alpha: float) -> PeakParams:
        return PeakParams(self.p, self.q, self.a, alpha, self.c_bracket)


@dataclass(frozen=True)
class TensorGrid3:
    t1_nodes: np.ndarray
    t2_nodes: np.ndarray
    s_nodes: np.ndarray

    def __post_init__(self) -> None:
        for name in ("t1_nodes", "t2_nodes", "s_nodes"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if np.any(np.diff(arr) <= 0):
                raise ValueError(f"{name} must be strictly increasing")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.n1 < 8 or self.n2 < 8:
            raise ValueError("need at least 8 cells in each transverse direction")
        if self.ns < 32:
            raise ValueError("need at least 32 cells in s")
        if self.s_nodes[0] <= 0:
            raise ValueError("s_min must be positive")

    @property
    def n1(self) -> int:
        return self.t1_nodes.size - 1

    @property
    def n2(self) -> int:
        return self.t2_nodes.size - 1

    @property
    def ns(self) -> int:
        return self.s_nodes.size - 1

    @property
    def s_min(self) -> float:
        return float(self.s_nodes[0])

    @property
    def grid_id(self) -> str:
        return f"tensor[{self.n1}x{self.n2}x{self.ns},smin={self.s_min:.3e}]"

    def descriptor(self) -> dict:
        return {"n1": self.n1, "n2": self.n2, "ns": self.ns, "s_min": self.s_min}


def s_grid(s_min: float, a: float, ns: int, ratio: float = 1.1) -> np.ndarray:
    """Exactly ``ns`` cells on ``[s_min, a]``: geometric from ``s_min``, then uniform.

    The geometric cells start at width ``s_min (ratio - 1)`` and grow until
    they reach a cap; the cap is tuned by bisection so the cell count is
    exactly ``ns``.  When ``ns`` purely geometric cells cannot reach ``a`` the
    growth ratio is raised to ``(a / s_min)^(1/ns)``, the smallest that can.
    """
    if not 0 < s_min < a:
        raise ValueError("need 0 < s_min < a")
    if ns < 2:
        raise ValueError("need at least two cells")
    ratio = max(ratio, (a / s_min) ** (1.0 / (ns - 1)))

    def build(cap: float) -> np.ndarray:
        nodes = [s_min]
        h = s_min * (ratio - 1)
        while h < cap and nodes[-1] + h < a:
            nodes.append(nodes[-1] + h)
            h *= ratio
        m = max(1, math.ceil((a - nodes[-1]) / cap - 1e-12))
        return np.concatenate([nodes[:-1], np.linspace(nodes[-1], a, m + 1)])

    lo, hi = 1e-14 * a, a
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if build(mid).size - 1 > ns:
            lo = mid
        else:
            hi = mid
    nodes = build(hi)
    # the count can jump past ns at a single cap; split the widest cells
    while nodes.size - 1 < ns:
        i = int(np.argmax(np.diff(nodes)))
        nodes = np.insert(nodes, i + 1, 0.5 * (nodes[i] + nodes[i + 1]))
    return nodes


def make_grid(
    params: PeakParams,
    n1: int = 24,
    n2: int = 24,
    ns: int = 96,
    *,
    s_min: float | None = None,
    ratio: float = 1.1,
) -> TensorGrid3:
    """Default tensor grid: uniform in ``t``, graded in ``s`` (``s_min = 1e-3 a``)."""
    s_min = 1e-3 * params.a if s_min is None else s_min
    return TensorGrid3(
        np.linspace(-params.l1, params.l1, n1 + 1),
        np.linspace(-params.l2, params.l2, n2 + 1),
        s_grid(s_min, params.a, ns, ratio),
    )


# -- geometry ----------------------------------------------------------------


def jacobian(t1: float, t2: float, s: float, p: float, q: float) -> np.ndarray:
    """Jacobian of ``X(t1, t2, s) = (s^p t1, s^q t2, s)``."""
    return np.array(
        [
            [s ** p, 0.0, p * s ** (p - 1) * t1],
            [0.0, s ** q, q * s ** (q - 1) * t2],
            [0.0, 0.0, 1.0],
        ]
    )


def metric_matrix(t1: float, t2: float, s: float, p: float, q: float) -> np.ndarray:
    """The inverse metric ``G = (DX^T DX)^(-1)`` in closed form."""
    if not s > 0:
        raise ValueError("metric is defined for s > 0")
    return np.array(
        [
            [s ** (-2 * p) + p * p * t1 * t1 / s ** 2, p * q * t1 * t2 / s ** 2, -p * t1 / s],
            [p * q * t1 * t2 / s ** 2, s ** (-2 * q) + q * q * t2 * t2 / s ** 2, -q * t2 / s],
            [-p * t1 / s, -q * t2 / s, 1.0],
        ]
    )


def face_weights(params: PeakParams, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact surface weights on the ``t1 = +-l1`` and ``t2 = +-l2`` faces."""
    p, q, al = params.p, params.q, params.alpha
    w1 = s ** q * np.sqrt(p * p * al ** (2 - 2 * p) * s ** (2 * p - 2) + 1)
    w2 = s ** p * np.sqrt(q * q * al ** (2 - 2 * q) * s ** (2 * q - 2) + 1)
    return w1, w2


# -- 1D building blocks ---------------------------------------------------------


def mat1d(x: np.ndarray, f: Callable[[np.ndarray], np.ndarray], trial: str, test: str) -> sp.csr_matrix:
    """``A[i, j] = int f (D_trial phi_j)(D_test phi_i)`` for hat functions on ``x``.

    ``trial``/``test`` are ``"v"`` (value) or ``"d"`` (derivative); the
    integral uses 3-point Gauss per cell.
    """
    n = x.size
    h = np.diff(x)
    gx, gw = GAUSS3
    xi = 0.5 * (gx + 1)
    qp = x[:-1, None] + h[:, None] * xi
    F = f(qp) * (0.5 * h[:, None] * gw)
    shape = {
        "v": (np.broadcast_to(1 - xi, qp.shape), np.broadcast_to(xi, qp.shape)),
        "d": (np.broadcast_to(-1 / h[:, None], qp.shape), np.broadcast_to(1 / h[:, None], qp.shape)),
    }
    rows, cols, vals = [], [], []
    cells = np.arange(n - 1)
    for i in range(2):
        for j in range(2):
            rows.append(cells + i)
            cols.append(cells + j)
            vals.append(np.sum(F * shape[test][i] * shape[trial][j], axis=1))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def _ends(n: int) -> sp.csr_matrix:
    return sp.csr_matrix(([1.0, 1.0], ([0, n - 1], [0, n - 1])), shape=(n, n))


def _one(x: np.ndarray) -> np.ndarray:
    return np.ones_like(x)


def _kron3(S, T1, T2) -> sp.csr_matrix:
    return sp.kron(sp.kron(S, T1, format="csr"), T2, format="csr")


def _bilinear_terms(params: PeakParams, grid: TensorGrid3, kind: FormKind) -> list:
    """List of ``(coef, S, T1, T2)`` Kronecker factors of the stiffness form."""
    p, q, gam = params.p, params.q, params.gamma
    s, x1, x2 = grid.s_nodes, grid.t1_nodes, grid.t2_nodes
    weighted = kind == FormKind.EXACT_WEIGHTED
    pw = p + q

    def sw(fn):
        # multiply s-coefficients by the volume weight in the weighted space
        return (lambda z: fn(z) * z ** pw) if weighted else fn

    M1 = mat1d(x1, _one, "v", "v")
    M2 = mat1d(x2, _one, "v", "v")
    terms = []
    if kind in (FormKind.EXACT_WEIGHTED, FormKind.EXACT_FLAT):
        # <grad u, G grad v>: diagonal entries
        terms += [
            (mat1d(s, sw(lambda z: z ** (-2 * p)), "v", "v"), mat1d(x1, _one, "d", "d"), M2),
            (mat1d(s, sw(lambda z: z ** -2.0), "v", "v"), mat1d(x1, lambda t: p * p * t * t, "d", "d"), M2),
            (mat1d(s, sw(lambda z: z ** (-2 * q)), "v", "v"), M1, mat1d(x2, _one, "d", "d")),
            (mat1d(s, sw(lambda z: z ** -2.0), "v", "v"), M1, mat1d(x2, lambda t: q * q * t * t, "d", "d")),
            (mat1d(s, sw(_one), "d", "d"), M1, M2),
        ]
        # off-diagonal entries, both orderings (trial pattern, test pattern)
        for a_, b_ in (("d", "v"), ("v", "d")):
            terms += [
                (mat1d(s, sw(lambda z: z ** -2.0), "v", "v"),
                 mat1d(x1, lambda t: p * q * t, a_, b_), mat1d(x2, lambda t: t, b_, a_)),
                (mat1d(s, sw(lambda z: 1 / z), b_, a_), mat1d(x1, lambda t: -p * t, a_, b_), M2),
                (mat1d(s, sw(lambda z: 1 / z), b_, a_), M1, mat1d(x2, lambda t: -q * t, a_, b_)),
            ]
        if kind == FormKind.EXACT_FLAT:
            # w = grad u - gam u/s e3: cross terms u (G e3 . grad v) and the gam^2/s^2 mass
            for a_, b_ in (("d", "v"), ("v", "d")):
                terms += [
                    (mat1d(s, lambda z: z ** -2.0, "v", "v"), mat1d(x1, lambda t: gam * p * t, a_, b_), M2),
                    (mat1d(s, lambda z: z ** -2.0, "v", "v"), M1, mat1d(x2, lambda t: gam * q * t, a_, b_)),
                    (mat1d(s, lambda z: -gam / z, a_, b_), M1, M2),
                ]
            terms.append((mat1d(s, lambda z: gam * gam / z ** 2, "v", "v"), M1, M2))
    else:
        fac = params.factor(kind)
        terms += [
            (fac * mat1d(s, lambda z: z ** (-2 * p), "v", "v"), mat1d(x1, _one, "d", "d"), M2),
            (fac * mat1d(s, lambda z: z ** (-2 * q), "v", "v"), M1, mat1d(x2, _one, "d", "d")),
            (fac * (mat1d(s, _one, "d", "d") + mat1d(s, lambda z: params.g / (4 * z * z), "v", "v")), M1, M2),
        ]
    return terms


def _boundary_terms(params: PeakParams, grid: TensorGrid3, kind: FormKind, tip: str) -> list:
    p, q = params.p, params.q
    s, x1, x2 = grid.s_nodes, grid.t1_nodes, grid.t2_nodes
    M1 = mat1d(x1, _one, "v", "v")
    M2 = mat1d(x2, _one, "v", "v")
    E1 = _ends(x1.size)
    E2 = _ends(x2.size)
    if kind == FormKind.EXACT_WEIGHTED:
        b1 = lambda z: face_weights(params, z)[0]
        b2 = lambda z: face_weights(params, z)[1]
    elif kind == FormKind.EXACT_FLAT:
        b1 = lambda z: face_weights(params, z)[0] * z ** (-(p + q))
        b2 = lambda z: face_weights(params, z)[1] * z ** (-(p + q))
    else:
        b1 = lambda z: z ** (-p)
        b2 = lambda z: z ** (-q)
    terms = [
        (-mat1d(s, b1, "v", "v"), E1, M2),
        (-mat1d(s, b2, "v", "v"), M1, E2),
    ]
    if kind.is_bracket and tip == "natural":
        # integration by parts of the cross term leaves gam w^2 / s at the tip
        Es = sp.csr_matrix(([params.gamma / s[0]], ([0], [0])), shape=(s.size, s.size))
        terms.append((params.factor(kind) * Es, M1, M2))
    return terms


def _keep_mask(grid: TensorGrid3, tip: str) -> np.ndarray:
    keep = np.ones((grid.s_nodes.size, grid.t1_nodes.size, grid.t2_nodes.size), dtype=bool)
    keep[-1] = False  # Dirichlet at s = a
    if tip == "dirichlet":
        keep[0] = False
    elif tip != "natural":
        raise ValueError(f"tip condition must be 'dirichlet' or 'natural', got {tip!r}")
    return keep


def _restrict(A: sp.csr_matrix, idx: np.ndarray) -> sp.csr_matrix:
    return A[idx][:, idx].tocsr()


def assemble_peak_form(
    params: PeakParams,
    grid: TensorGrid3,
    kind: FormKind | str = FormKind.EXACT_FLAT,
    tip_condition: str = "dirichlet",
) -> OperatorPencil:
    """Trilinear finite-element pencil of one of the four forms."""
    kind = FormKind(kind)
    if kind.is_bracket and not params.bracket_feasible:
        raise FeasibilityError(
            f"c * alpha^(1-p) = {params.c * params.l1:.4g} >= 1; the lower bracket degenerates"
        )
    if abs(grid.t1_nodes[-1] - params.l1) > 1e-12 * params.l1 or abs(grid.t2_nodes[-1] - params.l2) > 1e-12 * params.l2:
        raise ValueError("grid extents do not match alpha^(1-p), alpha^(1-q)")
    if grid.s_nodes[-1] != params.a:
        raise ValueError("grid must end at s = a")
    terms = _bilinear_terms(params, grid, kind) + _boundary_terms(params, grid, kind, tip_condition)
    K = sum((_kron3(S, T1, T2) for S, T1, T2 in terms), start=sp.csr_matrix(
        (grid.s_nodes.size * grid.t1_nodes.size * grid.t2_nodes.size,) * 2))
    mw = (lambda z: z ** (params.p + params.q)) if kind == FormKind.EXACT_WEIGHTED else _one
    M = _kron3(mat1d(grid.s_nodes, mw, "v", "v"), mat1d(grid.t1_nodes, _one, "v", "v"),
               mat1d(grid.t2_nodes, _one, "v", "v"))
    keep = _keep_mask(grid, tip_condition)
    idx = np.flatnonzero(keep.ravel())
    K = _restrict(K, idx)
    M = _restrict(M, idx)
    if np.any(M.diagonal() <= 0):
        raise ValueError("degenerate cell volume")
    n_s = int(keep[:, 0, 0].sum())
    return OperatorPencil(
        K, M, f"{grid.grid_id}/{kind.value}/{tip_condition}", ("robin",) * 4 + (tip_condition, "dirichlet"),
        shape=(n_s, grid.t1_nodes.size, grid.t2_nodes.size),
        meta={"kind": kind.value, "tip": tip_condition, "alpha": params.alpha, "c": params.c if kind.is_bracket else None},
    )


def nodal_weights(grid: TensorGrid3, params: PeakParams, tip: str = "dirichlet") -> np.ndarray:
    """``s^(-(p+q)/2)`` at every unknown: the diagonal of the weighted-to-flat map."""
    keep = _keep_mask(grid, tip)
    s_full = np.broadcast_to(grid.s_nodes[:, None, None], keep.shape)[keep]
    return s_full ** (-params.gamma)


def conjugate_nodal(pencil: OperatorPencil, grid: TensorGrid3, params: PeakParams) -> OperatorPencil:
    """Apply ``u -> s^(-(p+q)/2) u`` nodally to a weighted pencil (a congruence).

    Eigenvalues are unchanged; an eigenvector ``x`` of the weighted pencil
    becomes ``x / nodal_weights`` for the conjugated one.
    """
    d = sp.diags(nodal_weights(grid, params, pencil.meta.get("tip", "dirichlet")))
    return OperatorPencil(
        (d @ pencil.stiffness @ d).tocsr(), (d @ pencil.mass @ d).tocsr(),
        pencil.grid_id + "/nodal-conjugate", pencil.boundary_tags, pencil.shape, dict(pencil.meta),
    )


def reflection_permutation(pencil: OperatorPencil) -> np.ndarray:
    """Index map of ``(t1, t2) -> (-t1, -t2)`` on the structured unknowns."""
    ns, m1, m2 = pencil.shape
    idx = np.arange(ns * m1 * m2).reshape(ns, m1, m2)
    return idx[:, ::-1, ::-1].ravel()


def symmetrize(pencil: OperatorPencil) -> OperatorPencil:
    """Average the pencil with its image under the point reflection in ``t``."""
    P = reflection_permutation(pencil)
    K = pencil.stiffness
    M = pencil.mass
    Ks = 0.5 * (K + K[P][:, P])
    Ms = 0.5 * (M + M[P][:, P])
    return OperatorPencil(Ks.tocsr(), Ms.tocsr(), pencil.grid_id + "/sym", pencil.boundary_tags,
                          pencil.shape, dict(pencil.meta))


# -- comparison constant ---------------------------------------------------------


def bracket_constant(p: float, q: float) -> float:
    """``2 + 3 p^2 + 3 q^2``: a constant dominating every correction coefficient.

    For ``alpha >= 1`` each of ``alpha^(1-q)``, ``alpha^(2-2p)``, ``alpha^(2-2q)``
    is at most ``alpha^(1-p)``.  The gradient corrections are then bounded by
    ``(1 + 3p^2) alpha^(1-p)`` and ``(1 + 3q^2) alpha^(1-p)`` and the surface
    weights by ``1 + p alpha^(1-p)``, and the sum of these coefficients is at
    most ``2 + 3p^2 + 3q^2``.  The minus form needs ``c alpha^(1-p) < 1``,
    which for this value holds only at very large ``alpha``; see
    :func:`feasible_bracket_constant`.
    """
    if not 1 < p < q < 2:
        raise ValueError(f"need 1 < p < q < 2, got p={p}, q={q}")
    return 2 + 3 * p * p + 3 * q * q


def scaled_metric_extreme_eigenvalues(params: PeakParams) -> tuple[float, float]:
    """Extreme eigenvalues of ``D G D`` (``D = diag(s^p, s^q, 1)``) over the box.

    ``D G D = I + e3 v^T + v e3^T + v v^T`` restricted appropriately, with
    ``v = (-p t1 s^(p-1), -q t2 s^(q-1), 0)``; the extremes are attained at
    the box corners at ``s = a``.
    """
    p, q, a, al = params.p, params.q, params.a, params.alpha
    v2 = p * p * al ** (2 - 2 * p) * a ** (2 * p - 2) + q * q * al ** (2 - 2 * q) * a ** (2 * q - 2)
    v = math.sqrt(v2)
    lam_max = 1 + v2 / 2 + v * math.sqrt(1 + v2 / 4)
    return 1 / lam_max, lam_max


def feasible_bracket_constant(p: float, q: float, a: float, alphas: Sequence[float]) -> float:
    """A comparison constant usable over all of ``alphas``.

    The lower bracket is dominated pointwise by the exact gradient form when
    ``1 - c alpha^(1-p)`` does not exceed the smallest eigenvalue of the
    scaled metric; it is nondegenerate when ``c alpha^(1-p) < 1``.  Returns
    the midpoint of the resulting interval (or the lower end times 1.05 if
    the interval is empty).
    """
    lo, hi = 0.0, math.inf
    for al in alphas:
        pp = PeakParams(p, q, a, float(al), c_bracket=1.0)
        lam_min, _ = scaled_metric_extreme_eigenvalues(pp)
        lo = max(lo, (1 - lam_min) / pp.l1)
        hi = min(hi, 1 / pp.l1)
    if lo >= hi:
        log.warning("no comparison constant is feasible for all alphas; using %g", 1.05 * lo)
        return 1.05 * lo
    return 0.5 * (lo + hi)


# -- sandwich checks ------------------------------------------------------------


def gradient_forms(params: PeakParams, grid: TensorGrid3, tip: str = "dirichlet") -> dict[str, sp.csr_matrix]:
    """Weighted gradient forms: the two-sided diagonal estimates and the exact one.

    The lower estimate carries coefficients ``1 - alpha^(1-p) - alpha^(1-q)``
    (on ``|ds u|^2``), ``1 - p^2 alpha^(1-p)`` and ``1 - q^2 alpha^(1-q)``;
    the upper one ``1 + alpha^(1-p) + alpha^(1-q)``,
    ``1 + p^2 (alpha^(1-p) + 2 alpha^(2-2p))`` and the ``q`` twin.
    """
    p, q, al = params.p, params.q, params.alpha
    s, x1, x2 = grid.s_nodes, grid.t1_nodes, grid.t2_nodes
    pw = p + q
    M1 = mat1d(x1, _one, "v", "v")
    M2 = mat1d(x2, _one, "v", "v")
    D1 = mat1d(x1, _one, "d", "d")
    D2 = mat1d(x2, _one, "d", "d")
    S1 = mat1d(s, lambda z: z ** (pw - 2 * p), "v", "v")
    S2 = mat1d(s, lambda z: z ** (pw - 2 * q), "v", "v")
    S3 = mat1d(s, lambda z: z ** pw, "d", "d")

    def diag_form(cs, c1, c2):
        return c1 * _kron3(S1, D1, M2) + c2 * _kron3(S2, M1, D2) + cs * _kron3(S3, M1, M2)

    lower = diag_form(1 - al ** (1 - p) - al ** (1 - q), 1 - p * p * al ** (1 - p), 1 - q * q * al ** (1 - q))
    upper = diag_form(
        1 + al ** (1 - p) + al ** (1 - q),
        1 + p * p * (al ** (1 - p) + 2 * al ** (2 - 2 * p)),
        1 + q * q * (al ** (1 - q) + 2 * al ** (2 - 2 * q)),
    )
    exact = sum(_kron3(S, T1, T2) for S, T1, T2 in _bilinear_terms(params, grid, FormKind.EXACT_WEIGHTED))
    idx = np.flatnonzero(_keep_mask(grid, tip).ravel())
    return {name: _restrict(A, idx) for name, A in (("lower", lower), ("exact", exact), ("upper", upper))}


@dataclass
class SandwichReport:
    alpha: float
    samples: int
    holds: int
    worst_lower_margin: float
    worst_upper_margin: float
    violations: list[int] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.holds == self.samples


def _ordering(lo_vals, mid_vals, hi_vals, tol):
    lo_vals, mid_vals, hi_vals = map(np.asarray, (lo_vals, mid_vals, hi_vals))
    scale = np.maximum.reduce([np.abs(lo_vals), np.abs(mid_vals), np.abs(hi_vals)])
    m_lo = (mid_vals - lo_vals) / scale
    m_hi = (hi_vals - mid_vals) / scale
    ok = (m_lo >= -tol) & (m_hi >= -tol)
    return ok, m_lo, m_hi


def _quad(A, U):
    return np.einsum("ij,ij->j", U, A @ U)


def random_vectors(n: int, samples: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, samples))


def lemma5_sandwich_check(
    params: PeakParams, grid: TensorGrid3, samples: int = 100, *, seed: int = 0, tol: float = 1e-10,
    vectors: np.ndarray | None = None,
) -> SandwichReport:
    """Ordering ``lower <= exact <= upper`` of the weighted gradient forms."""
    forms = gradient_forms(params, grid)
    n = forms["exact"].shape[0]
    U = random_vectors(n, samples, seed) if vectors is None else vectors
    ok, m_lo, m_hi = _ordering(_quad(forms["lower"], U), _quad(forms["exact"], U), _quad(forms["upper"], U), tol)
    return SandwichReport(params.alpha, U.shape[1], int(ok.sum()), float(m_lo.min()), float(m_hi.min()),
                          np.flatnonzero(~ok).tolist())


def form_sandwich_check(
    params: PeakParams,
    grid: TensorGrid3,
    samples: int = 100,
    *,
    seed: int = 0,
    tol: float = 1e-10,
    tip: str = "dirichlet",
    exact_route: str = "nodal",
    extra_vectors: np.ndarray | None = None,
) -> SandwichReport:
    """Ordering ``p_minus(u) <= r(u) <= p_plus(u)`` of full form values.

    ``r`` is the exact form in the flat space, obtained either from the
    weighted pencil by the nodal map (``exact_route="nodal"``) or from the
    directly assembled flat form (``"flat"``).  Random coefficient vectors
    plus any ``extra_vectors`` (typically computed low eigenvectors) are
    tested.
    """
    if exact_route == "nodal":
        Ke = conjugate_nodal(assemble_peak_form(params, grid, FormKind.EXACT_WEIGHTED, tip), grid, params).stiffness
    elif exact_route == "flat":
        Ke = assemble_peak_form(params, grid, FormKind.EXACT_FLAT, tip).stiffness
    else:
        raise ValueError(f"exact_route must be 'nodal' or 'flat', got {exact_route!r}")
    Km = assemble_peak_form(params, grid, FormKind.BRACKET_MINUS, tip).stiffness
    Kp = assemble_peak_form(params, grid, FormKind.BRACKET_PLUS, tip).stiffness
    U = random_vectors(Ke.shape[0], samples, seed)
    if extra_vectors is not None:
        U = np.column_stack([U, extra_vectors])
    ok, m_lo, m_hi = _ordering(_quad(Km, U), _quad(Ke, U), _quad(Kp, U), tol)
    return SandwichReport(params.alpha, U.shape[1], int(ok.sum()), float(m_lo.min()), float(m_hi.min()),
                          np.flatnonzero(~ok).tolist())


# -- solving --------------------------------------------------------------------------


def surrogate_pencil(params: PeakParams, grid: TensorGrid3, kind: FormKind) -> OperatorPencil:
    """1D model operator on the grid's ``s`` nodes with the bracket scaling.

    ``fac * A`` with coefficients ``alpha^(p-1)/fac, alpha^(q-1)/fac`` and
    Dirichlet ends; ``fac = 1`` for the exact forms.
    """
    fac = params.factor(kind)
    spec = ModelPotentialSpec(params.alpha ** (params.p - 1) / fac, params.alpha ** (params.q - 1) / fac,
                              params.p, params.q)
    pen = assemble_fe(grid.s_nodes, spec.potential, "surrogate")
    return OperatorPencil(fac * pen.stiffness, pen.mass, pen.grid_id, pen.boundary_tags, meta=pen.meta)


def surrogate_shift(params: PeakParams, grid: TensorGrid3, kind: FormKind, margin: float = 0.1) -> float:
    lam = tridiag_smallest(surrogate_pencil(params, grid, kind), 1, vectors=False).values[0]
    return float(lam - margin * abs(lam))


def initial_block(params: PeakParams, grid: TensorGrid3, kind: FormKind, m: int, tip: str) -> np.ndarray:
    """Surrogate ``s``-profiles times constants in ``t``, plus ``t``-linear modes."""
    k1 = max(1, m - 2)
    res = tridiag_smallest(surrogate_pencil(params, grid, kind), min(k1, grid.ns - 1))
    prof = np.zeros((grid.s_nodes.size, res.vectors.shape[1]))
    prof[1:-1] = res.vectors
    if tip == "natural":
        prof[0] = prof[1]
    if kind == FormKind.EXACT_WEIGHTED:
        # flat profiles w correspond to u = s^(-(p+q)/2) w in the weighted space
        prof *= grid.s_nodes[:, None] ** (-params.gamma)
    keep = _keep_mask(grid, tip)
    one1 = np.ones(grid.t1_nodes.size)
    one2 = np.ones(grid.t2_nodes.size)
    cols = [np.kron(np.kron(prof[:, i], one1), one2) for i in range(prof.shape[1])]
    lin1 = grid.t1_nodes / params.l1
    lin2 = grid.t2_nodes / params.l2
    cols.append(np.kron(np.kron(prof[:, 0], lin1), one2))
    cols.append(np.kron(np.kron(prof[:, 0], one1), lin2))
    X = np.column_stack(cols)[keep.ravel()]
    return X[:, :m] if X.shape[1] >= m else X


def solve_peak(
    params: PeakParams,
    grid: TensorGrid3,
    kind: FormKind | str,
    k: int = 3,
    *,
    tip: str = "dirichlet",
    tol: float = 1e-8,
    block: int | None = None,
    pencil: OperatorPencil | None = None,
) -> EigenResult:
    """Lowest ``k`` eigenpairs of an assembled peak form."""
    kind = FormKind(kind)
    pencil = pencil or assemble_peak_form(params, grid, kind, tip)
    m = block or k + max(2, k // 2)
    sigma = surrogate_shift(params, grid, kind)
    X0 = initial_block(params, grid, kind, m, tip)
    return sparse_smallest(pencil, k, tol, sigma=sigma, block=m, X0=X0)
