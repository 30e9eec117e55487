from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from peakspec.eigensolve import dense_smallest
from peakspec.grid1d import (
    Domain,
    Grid1D,
    ModelPotentialSpec,
    assemble_fe,
    assemble_model,
    default_grid,
    graded_nodes,
    hardy_quotient,
    ims_constant,
    ims_constant_bound,
    ims_cutoffs,
    ims_inequality_check,
    model_eigenvalues,
    outer_domain_bound,
    reference_constant,
    reference_eigenvalues,
    refine,
    richardson,
    robin_fd_reference,
    scale_grid,
)
from peakspec.secular import IntervalRobinSpec, interval_eigenvalue

SPEC01 = ModelPotentialSpec(0.0, 1.0, 1.2, 1.5)


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelPotentialSpec(0.0, 1.0, 1.5, 1.2)
    with pytest.raises(ValueError):
        ModelPotentialSpec(-1.0, 1.0)
    assert SPEC01.g == pytest.approx(2.7 ** 2 - 5.4)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid1D(np.array([0.0, 1.0, 2.0]))
    with pytest.raises(ValueError):
        Grid1D(np.array([1.0, 0.5, 2.0]))
    with pytest.raises(ValueError):
        Grid1D(np.array([0.1, 0.5, 2.0]), ratio=1.7)


def test_dirichlet_laplacian():
    x = np.linspace(0, 1, 2001)
    pen = assemble_fe(x, lambda s: np.zeros_like(s))
    from peakspec.eigensolve import tridiag_smallest

    assert tridiag_smallest(pen, 1).values[0] == pytest.approx(math.pi ** 2, abs=1e-4)


def test_negative_ground_state():
    assert model_eigenvalues(SPEC01, default_grid(SPEC01), Domain.full(), 1)[0] < 0


def test_reference_matches_shooting_oracle(oracle):
    ref = reference_eigenvalues(SPEC01, 3)
    assert ref.values[0] == pytest.approx(oracle["model"]["p1.2_q1.5_E1"], abs=1e-9)
    assert ref.values[1] == pytest.approx(oracle["model"]["p1.2_q1.5_E2"], abs=1e-9)
    # successive Richardson estimates agree
    assert max(ref.agreement) < 1e-6


def test_reference_constant_frozen():
    assert reference_constant(1.2, 1.5, 1) == pytest.approx(-0.0363602352510, abs=1e-11)


def test_refinement_monotone():
    g = default_grid(SPEC01)
    vals = []
    for _ in range(3):
        vals.append(model_eigenvalues(SPEC01, g, None, 3))
        g = refine(g)
    vals = np.array(vals)
    assert np.all(np.diff(vals, axis=0) < 0)


def test_richardson_exact_on_quadratic_error():
    h = np.array([1.0, 0.5, 0.25])
    raw = (2.0 + 3 * h ** 2)[:, None]
    assert np.allclose(richardson(raw), 2.0)


def test_matches_dense_oracle():
    nodes = graded_nodes(1e-3, 40.0, 1.12, 0.5, SPEC01.well_bottom)
    idx = np.linspace(0, nodes.size - 1, 400).astype(int)
    g = Grid1D(np.unique(nodes[idx]))
    pen = assemble_model(SPEC01, g)
    got = model_eigenvalues(SPEC01, g, None, 4)
    assert np.allclose(got, dense_smallest(pen, 4), atol=1e-10, rtol=0)


@pytest.mark.parametrize("b", [0.5, 1.0, 2.0])
def test_truncation_bracket(b):
    g = default_grid(SPEC01, breakpoints=(b,))
    inner = model_eigenvalues(SPEC01, g, Domain.inner(b), 5)
    full = model_eigenvalues(SPEC01, g, Domain.full(), 5)
    assert all(i >= f for i, f in zip(inner, full))


def test_extra_attraction_lowers():
    g = default_grid(SPEC01)
    base = model_eigenvalues(SPEC01, g, None, 3)
    more = model_eigenvalues(ModelPotentialSpec(0.7, 1.0), g, None, 3)
    assert all(m <= b for m, b in zip(more, base))


@pytest.mark.parametrize("c", [0.5, 2.0, 5.0])
def test_scaling_covariance(c):
    spec = ModelPotentialSpec(0.4, 1.3)
    g = default_grid(spec)
    lhs = np.array(model_eigenvalues(spec, g, None, 3))
    scaled = spec.scaled(c)
    rhs = c ** 2 * np.array(model_eigenvalues(scaled, scale_grid(g, c), None, 3))
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=0)


def test_hardy_examples():
    g = Grid1D(np.geomspace(1e-3, 10.0, 400))
    hat = np.zeros(400)
    hat[200] = 1.0
    assert hardy_quotient(g, hat) >= 1.0
    far = np.zeros(400)
    far[-5:-1] = 1.0
    assert hardy_quotient(g, far) > 100
    with pytest.raises(ValueError):
        hardy_quotient(g, np.ones(400))


def test_hardy_random():
    g = Grid1D(np.geomspace(1e-3, 10.0, 300))
    rng = np.random.default_rng(7)
    worst = np.inf
    for _ in range(200):
        f = rng.standard_normal(300).cumsum()
        f[0] = f[-1] = 0.0
        worst = min(worst, hardy_quotient(g, f))
    assert worst >= 0.98


@given(b=st.floats(0.1, 4.0))
def test_ims_cutoffs_partition(b):
    c1, c2, _, _ = ims_cutoffs(b)
    s = np.linspace(0.01 * b, 1.5 * b, 301)
    assert np.allclose(c1(s) ** 2 + c2(s) ** 2, 1.0, atol=1e-14)
    assert np.all(c2(s[s < 0.5 * b]) == 0)
    assert np.allclose(c1(s[s > 0.75 * b]), 0, atol=1e-15)


def test_ims_constant_bounded():
    for b in (0.25, 0.5, 1.0):
        K = ims_constant(b)
        assert 0 < K <= ims_constant_bound(b)
    # narrowing the transition raises K like width^-2
    assert ims_constant(0.25) == pytest.approx(4 * ims_constant(0.5), rel=1e-6)


def test_ims_check_alpha8():
    rep = ims_inequality_check(1.2, 1.5, 8.0, 0.5, 3)
    assert rep.all_passed
    assert rep.outer_lowest >= rep.outer_bound


def test_ims_check_threshold_guard():
    with pytest.raises(ValueError):
        ims_inequality_check(1.2, 1.5, 2.0, 0.5, 3)


@pytest.mark.parametrize("alpha", [8.0, 32.0])
def test_outer_domain_bound(alpha):
    b = 0.5
    spec = ModelPotentialSpec(alpha ** 0.2, alpha ** 0.5)
    g = default_grid(spec, s_max=max(60 * spec.length_scale, 4 * b), breakpoints=(b / 4,))
    low = model_eigenvalues(spec, g, Domain.outer(b / 4), 1)[0]
    assert low >= outer_domain_bound(1.2, 1.5, alpha, b)


def test_fd_oracle_neumann():
    vals = robin_fd_reference(1.0, 0.0, 3)
    assert vals[1] == pytest.approx(math.pi ** 2 / 4, abs=1e-9)


@given(L=st.floats(0.1, 4.0), r=st.floats(-1.0, 4.0))
def test_fd_oracle_matches_secular(L, r):
    ref = robin_fd_reference(L, r, 4)
    for j in range(1, 5):
        e = interval_eigenvalue(IntervalRobinSpec(L, r), j)
        assert abs(e - ref[j - 1]) <= 1e-8 * max(1.0, abs(e))
