from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st

from peakspec.eigensolve import dense_smallest
from peakspec.metric3d import (
    FeasibilityError,
    FormKind,
    PeakParams,
    TensorGrid3,
    assemble_peak_form,
    bracket_constant,
    conjugate_nodal,
    face_weights,
    feasible_bracket_constant,
    form_sandwich_check,
    gradient_forms,
    jacobian,
    lemma5_sandwich_check,
    make_grid,
    metric_matrix,
    reflection_permutation,
    s_grid,
    solve_peak,
    symmetrize,
)

P, Q = 1.2, 1.5


def small(alpha, n=8, ns=40, **kw):
    params = PeakParams(P, Q, 0.5, alpha)
    return params, make_grid(params, n, n, ns, **kw)


# -- geometry -------------------------------------------------------------------


def test_metric_on_axis_is_diagonal():
    s = 0.37
    assert np.array_equal(metric_matrix(0.0, 0.0, s, P, Q), np.diag([s ** (-2 * P), s ** (-2 * Q), 1.0]))


def test_axis_determinant():
    s = 0.21
    J = jacobian(0.0, 0.0, s, P, Q)
    assert np.linalg.det(J.T @ J) == pytest.approx(s ** (2 * (P + Q)), rel=1e-14)


def exact_inverse_gram(J):
    """``(J^T J)^(-1)`` in exact rational arithmetic on the float entries."""
    F = [[Fraction(float(v)) for v in row] for row in J]
    A = [[sum(F[k][i] * F[k][j] for k in range(3)) for j in range(3)] for i in range(3)]

    def cof(i, j):
        r = [x for x in range(3) if x != i]
        c = [x for x in range(3) if x != j]
        return (-1) ** (i + j) * (A[r[0]][c[0]] * A[r[1]][c[1]] - A[r[0]][c[1]] * A[r[1]][c[0]])

    det = sum(A[0][j] * cof(0, j) for j in range(3))
    return np.array([[float(cof(j, i) / det) for j in range(3)] for i in range(3)])


@given(t1=st.floats(-3, 3), t2=st.floats(-3, 3), s=st.floats(1e-3, 0.9),
       p=st.floats(1.01, 1.5), dq=st.floats(0.01, 0.45))
def test_metric_matches_inverse(t1, t2, s, p, dq):
    q = p + dq
    G = metric_matrix(t1, t2, s, p, q)
    oracle = exact_inverse_gram(jacobian(t1, t2, s, p, q))
    assert np.allclose(G, G.T, rtol=0, atol=0)
    assert np.all(np.abs(G - oracle) <= 1e-13 * np.abs(oracle) + 1e-300)
    assert np.all(np.linalg.eigvalsh(G) > 0)


def test_metric_rejects_nonpositive_s():
    with pytest.raises(ValueError):
        metric_matrix(0.0, 0.0, 0.0, P, Q)


def test_face_weights_match_surface_element():
    params = PeakParams(P, Q, 0.5, 16.0)
    s = np.linspace(0.01, 0.5, 7)
    w1, w2 = face_weights(params, s)
    for si, a1, a2 in zip(s, w1, w2):
        # |d_t2 X x d_s X| on t1 = l1 and |d_t1 X x d_s X| on t2 = l2
        J = jacobian(params.l1, params.l2, si, P, Q)
        assert np.linalg.norm(np.cross(J[:, 1], J[:, 2])) == pytest.approx(a1, rel=1e-13)
        assert np.linalg.norm(np.cross(J[:, 0], J[:, 2])) == pytest.approx(a2, rel=1e-13)


# -- grids and parameters ---------------------------------------------------------


def test_param_validation():
    for bad in ({"p": 1.5, "q": 1.2}, {"a": 1.5}, {"alpha": 0.5}, {"c_bracket": -1.0}):
        with pytest.raises(ValueError):
            PeakParams(**bad)


def test_grid_validation():
    x = np.linspace(-1, 1, 9)
    with pytest.raises(ValueError):
        TensorGrid3(np.linspace(-1, 1, 5), x, s_grid(1e-3, 0.5, 40))
    with pytest.raises(ValueError):
        TensorGrid3(x, x, np.linspace(0.1, 0.5, 10))


@pytest.mark.parametrize("ns", [32, 96, 200])
def test_s_grid_count_and_ends(ns):
    s = s_grid(5e-4, 0.5, ns)
    assert s.size == ns + 1
    assert s[0] == pytest.approx(5e-4) and s[-1] == pytest.approx(0.5)
    assert np.all(np.diff(s) > 0)


def test_extents_follow_alpha():
    params, grid = small(32.0)
    assert grid.t1_nodes[-1] == pytest.approx(params.l1)
    assert grid.t2_nodes[-1] == pytest.approx(params.l2)


# -- comparison constant ------------------------------------------------------------


def test_bracket_constant_value():
    assert bracket_constant(P, Q) == pytest.approx(13.07, abs=1e-12)
    with pytest.raises(ValueError):
        bracket_constant(1.5, 1.2)


def test_bracket_constant_dominates():
    c = bracket_constant(P, Q)
    rng = np.random.default_rng(1)
    for al in rng.uniform(1, 1e4, 200):
        l1 = al ** (1 - P)
        assert 1 + al ** (1 - P) + al ** (1 - Q) <= 1 + c * l1
        assert 1 + P * P * (al ** (1 - P) + 2 * al ** (2 - 2 * P)) <= 1 + c * l1
        assert 1 + Q * Q * (al ** (1 - Q) + 2 * al ** (2 - 2 * Q)) <= 1 + c * l1
        assert np.sqrt(P * P * al ** (2 - 2 * P) + 1) <= 1 + c * l1
        assert np.sqrt(Q * Q * al ** (2 - 2 * Q) + 1) <= 1 + c * l1


def test_infeasible_constant_rejected():
    params = PeakParams(P, Q, 0.5, 8.0, c_bracket=bracket_constant(P, Q))
    grid = make_grid(params, 8, 8, 40)
    assert not params.bracket_feasible
    with pytest.raises(FeasibilityError):
        assemble_peak_form(params, grid, FormKind.BRACKET_MINUS, "dirichlet")


def test_feasible_constant_in_range():
    alphas = [8, 16, 32, 64]
    c = feasible_bracket_constant(P, Q, 0.5, alphas)
    for al in alphas:
        assert PeakParams(P, Q, 0.5, al, c).bracket_feasible


# -- assembled forms ----------------------------------------------------------------


@pytest.mark.parametrize("kind", list(FormKind))
@pytest.mark.parametrize("tip", ["dirichlet", "natural"])
def test_pencil_shape_and_mass(kind, tip):
    params, grid = small(16.0, ns=32)
    pen = assemble_peak_form(params, grid, kind, tip)
    n_s = grid.ns - 1 + (tip == "natural")
    assert pen.shape == (n_s, grid.n1 + 1, grid.n2 + 1)
    assert pen.dim == np.prod(pen.shape)
    assert pen.asymmetry() < 1e-13
    sla.cholesky(pen.mass.toarray())  # raises unless positive definite


def test_bracket_gap_nonnegative():
    params, grid = small(16.0)
    Km = assemble_peak_form(params, grid, FormKind.BRACKET_MINUS, "dirichlet").stiffness
    Kp = assemble_peak_form(params, grid, FormKind.BRACKET_PLUS, "dirichlet").stiffness
    U = np.random.default_rng(3).standard_normal((Km.shape[0], 50))
    gap = np.einsum("ij,ij->j", U, (Kp - Km) @ U)
    assert np.all(gap >= 0)


@pytest.mark.parametrize("alpha", [8.0, 64.0])
def test_form_sandwich_small_grid(alpha):
    params, grid = small(alpha)
    for route in ("nodal", "flat"):
        rep = form_sandwich_check(params, grid, 60, seed=2, exact_route=route)
        assert rep.passed, rep


def test_eigenvalue_sandwich_small_grid():
    params, grid = small(16.0, ns=32)
    em = dense_smallest(assemble_peak_form(params, grid, FormKind.BRACKET_MINUS, "dirichlet"), 5)
    ee = dense_smallest(assemble_peak_form(params, grid, FormKind.EXACT_WEIGHTED, "dirichlet"), 5)
    ep = dense_smallest(assemble_peak_form(params, grid, FormKind.BRACKET_PLUS, "dirichlet"), 5)
    assert np.all(em <= ee) and np.all(ee <= ep)


def test_nodal_conjugation_is_congruence():
    params, grid = small(16.0, ns=32)
    pen = assemble_peak_form(params, grid, FormKind.EXACT_WEIGHTED, "dirichlet")
    a = dense_smallest(pen, 4)
    b = dense_smallest(conjugate_nodal(pen, grid, params), 4)
    assert np.allclose(a, b, rtol=1e-9, atol=0)


def test_flat_and_weighted_routes_converge():
    gaps = []
    for n, ns in ((8, 32), (12, 64)):
        params, grid = small(16.0, n=n, ns=ns)
        w = solve_peak(params, grid, FormKind.EXACT_WEIGHTED, 1, tol=1e-9).values[0]
        f = solve_peak(params, grid, FormKind.EXACT_FLAT, 1, tol=1e-9).values[0]
        gaps.append(abs(w - f) / abs(w))
    assert gaps[1] < gaps[0]


def test_large_alpha_bound_state():
    params, grid = small(64.0, ns=48)
    res = solve_peak(params, grid, FormKind.EXACT_WEIGHTED, 1)
    assert res.all_converged
    assert res.values[0] < 0


def test_reflection_symmetry():
    params, grid = small(16.0, ns=32)
    pen = assemble_peak_form(params, grid, FormKind.EXACT_WEIGHTED, "dirichlet")
    Pm = reflection_permutation(pen)
    K = pen.stiffness
    diff = abs(K[Pm][:, Pm] - K).max()
    assert diff <= 1e-12 * abs(K).max()
    a = dense_smallest(pen, 4)
    b = dense_smallest(symmetrize(pen), 4)
    assert np.allclose(a, b, rtol=1e-10, atol=0)


# -- gradient-form ordering ---------------------------------------------------------


def test_lemma5_ordering_alpha8():
    params, grid = small(8.0)
    rep = lemma5_sandwich_check(params, grid, 100, seed=0)
    assert rep.holds == 100


def test_lemma5_t_constant_vectors_scale_by_factors():
    params, grid = small(16.0)
    forms = gradient_forms(params, grid)
    ns_kept = grid.ns - 1
    prof = np.random.default_rng(0).standard_normal(ns_kept)
    u = np.kron(prof, np.ones((grid.n1 + 1) * (grid.n2 + 1)))
    vals = {k: u @ (A @ u) for k, A in forms.items()}
    corr = params.alpha ** (1 - P) + params.alpha ** (1 - Q)
    assert vals["lower"] / vals["exact"] == pytest.approx(1 - corr, rel=1e-12)
    assert vals["upper"] / vals["exact"] == pytest.approx(1 + corr, rel=1e-12)


def test_lemma5_gap_tightens():
    gaps = []
    for alpha in (8.0, 64.0):
        params, grid = small(alpha)
        forms = gradient_forms(params, grid)
        U = np.random.default_rng(5).standard_normal((forms["exact"].shape[0], 40))
        q = {k: np.einsum("ij,ij->j", U, A @ U) for k, A in forms.items()}
        gaps.append(np.median((q["upper"] - q["lower"]) / q["exact"]))
    assert gaps[1] < gaps[0]
