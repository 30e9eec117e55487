from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from peakspec.eigensolve import (
    SolverError,
    dense_smallest,
    sparse_smallest,
    sturm_count,
    tridiag_smallest,
)
from peakspec.grid1d import ModelPotentialSpec, assemble_fe, assemble_model, default_grid
from peakspec.pencil import OperatorPencil


def laplacian_1d(n):
    x = np.linspace(0, 1, n)
    return assemble_fe(x, lambda s: np.zeros_like(s))


def mat1d_lap(n, length):
    h = length / (n + 1)
    K = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]) / h
    M = sp.diags([np.ones(n - 1), 4 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]) * h / 6
    return K.tocsr(), M.tocsr()


def box_pencil(n=(14, 16, 20), lengths=(1.0, 1.3, 2.0)):
    """Trilinear Dirichlet Laplacian on a box, slowest index first."""
    Ks, Ms = zip(*(mat1d_lap(m, L) for m, L in zip(n, lengths)))
    K = (sp.kron(sp.kron(Ks[0], Ms[1]), Ms[2]) + sp.kron(sp.kron(Ms[0], Ks[1]), Ms[2])
         + sp.kron(sp.kron(Ms[0], Ms[1]), Ks[2])).tocsr()
    M = sp.kron(sp.kron(Ms[0], Ms[1]), Ms[2]).tocsr()
    return OperatorPencil(K, M, "box", ("dirichlet",) * 6, shape=tuple(n))


def test_dirichlet_laplacian_2000_nodes():
    res = tridiag_smallest(laplacian_1d(2000), 1)
    assert abs(res.values[0] - math.pi ** 2) < 1e-5


def test_tridiag_matches_dense():
    spec = ModelPotentialSpec(0.0, 1.0)
    g = default_grid(spec)
    nodes = g.nodes[np.linspace(0, g.nodes.size - 1, 400).astype(int)]
    pen = assemble_fe(np.unique(nodes), spec.potential)
    res = tridiag_smallest(pen, 5)
    assert np.allclose(res.values, dense_smallest(pen, 5), atol=1e-10, rtol=0)


def test_sturm_count_consistent():
    spec = ModelPotentialSpec(0.0, 1.0)
    pen = assemble_model(spec, default_grid(spec))
    res = tridiag_smallest(pen, 6)
    assert sturm_count(pen, 0.0) == int(np.sum(res.values < 0))


def test_tridiag_errors():
    pen = laplacian_1d(20)
    with pytest.raises(SolverError):
        tridiag_smallest(pen, 50)
    bad = OperatorPencil(pen.stiffness, -pen.mass, "bad", ())
    with pytest.raises(SolverError):
        tridiag_smallest(bad, 1)
    wide = OperatorPencil(sp.eye(10, format="csr") + sp.eye(10, k=2, format="csr") + sp.eye(10, k=-2, format="csr"),
                          sp.eye(10, format="csr"), "wide", ())
    with pytest.raises(SolverError):
        tridiag_smallest(wide, 1)


def test_tridiag_vectors_orthonormal():
    pen = laplacian_1d(300)
    res = tridiag_smallest(pen, 4)
    G = res.vectors.T @ (pen.mass @ res.vectors)
    assert np.allclose(G, np.eye(4), atol=1e-8)


def test_sparse_box_against_separable():
    n, lengths = (14, 16, 20), (1.0, 1.3, 2.0)
    pen = box_pencil(n, lengths)
    res = sparse_smallest(pen, 3, 1e-10)
    assert res.all_converged
    exact = sum((math.pi / L) ** 2 for L in lengths)
    assert abs(res.values[0] - exact) / exact < 0.005
    # the discrete separable value is exact for the pencil
    disc = 0.0
    for m, L in zip(n, lengths):
        K, M = mat1d_lap(m, L)
        disc += dense_smallest(OperatorPencil(K, M, "1d", ()), 1)[0]
    assert res.values[0] == pytest.approx(disc, rel=1e-9)


def test_sparse_block_sizes_agree():
    pen = box_pencil()
    a = sparse_smallest(pen, 3, 1e-10, block=5)
    b = sparse_smallest(pen, 3, 1e-10, block=8)
    assert np.allclose(a.values, b.values, rtol=1e-9, atol=0)


def test_sparse_rayleigh_and_orthonormality():
    pen = box_pencil()
    tol = 1e-9
    res = sparse_smallest(pen, 4, tol)
    X = res.vectors
    rq = np.einsum("ij,ij->j", X, pen.stiffness @ X) / np.einsum("ij,ij->j", X, pen.mass @ X)
    assert np.all(np.abs(res.values - rq) <= 10 * tol * np.abs(res.values))
    assert np.allclose(X.T @ (pen.mass @ X), np.eye(4), atol=1e-8)
    assert np.all(np.diff(res.values) >= 0)


def test_sparse_reports_nonconvergence():
    res = sparse_smallest(box_pencil(), 3, 1e-14, maxiter=1)
    assert not res.all_converged


def test_sparse_retries_singular_shift():
    pen = box_pencil((10, 10, 10), (1.0, 1.0, 1.0))
    exact = tridiag_smallest(OperatorPencil(*mat1d_lap(10, 1.0), "1d", ()), 1).values[0] * 3
    # shifting exactly onto the lowest eigenvalue makes K - sigma M singular
    res = sparse_smallest(pen, 1, 1e-9, sigma=exact)
    assert res.all_converged
    assert res.values[0] == pytest.approx(exact, rel=1e-9)


def test_sparse_argument_errors():
    pen = box_pencil()
    with pytest.raises(SolverError):
        sparse_smallest(pen, 0)
    with pytest.raises(SolverError):
        sparse_smallest(pen, 4, block=3)


@given(seed=st.integers(0, 10_000), drop=st.integers(1, 30))
def test_constraint_never_lowers(seed, drop):
    spec = ModelPotentialSpec(0.3, 1.0)
    g = default_grid(spec)
    nodes = np.unique(g.nodes[np.linspace(0, g.nodes.size - 1, 150).astype(int)])
    pen = assemble_fe(nodes, spec.potential)
    rng = np.random.default_rng(seed)
    keep = np.ones(pen.dim, dtype=bool)
    keep[rng.choice(pen.dim, size=drop, replace=False)] = False
    full = dense_smallest(pen, 5)
    sub = dense_smallest(pen.restrict(keep), 5)
    assert np.all(sub >= full - 1e-10 * np.abs(full).max())


def test_default_peak_pencil_k5():
    from peakspec.metric3d import PeakParams, make_grid, solve_peak

    params = PeakParams()
    res = solve_peak(params, make_grid(params), "exact_weighted", 5, tol=1e-8)
    assert res.all_converged
    assert np.all(res.residual_norms < 1e-8)
    assert np.all(res.relative_residuals < 1e-8)
    assert np.all(np.diff(res.values) > 0)
