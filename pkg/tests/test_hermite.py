from math import comb

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.linalg import expm, svdvals

from ou_spectra.canonical import m_chain3, m_ellnn, m_kramers, m_ou1, m_self
from ou_spectra.hermite import (
    BlockPropagator,
    block_size,
    chaos_axis_exponent,
    chaos_operator,
    check_galerkin,
    eigs_lowlying,
    evolve_coeffs,
    galerkin,
    grid_points,
    imaginary_axis_exponent,
    ladder_1d,
    pseudospectrum_scan,
    ray_probe,
    sigma_min,
    sigma_min_dense,
    simplex_indices,
    sigma_min_triangular,
)
from ou_spectra.model import compute_k0
from ou_spectra.spectrum import lattice_for_L


def test_ladder_commutator():
    # [d/dw, w] = 1 away from the truncation edge
    W, D = ladder_1d(12)
    comm = (D @ W - W @ D)[:-1, :-1]
    np.testing.assert_allclose(comm, np.eye(11), atol=1e-14)


def test_galerkin_invariants(canonical):
    op = galerkin(canonical, 8 if canonical.n < 3 else 5)
    res = check_galerkin(op)
    assert res["accretive_min"] >= 0
    assert max(res["adjoint"], res["ground"], res["degree"]) <= 1e-10, res


def test_ou1_galerkin_eigenvalues():
    op = galerkin(m_ou1(), 10)
    ev = np.sort(np.linalg.eigvals(op.dense()).real)
    np.testing.assert_allclose(ev, 0.5 + np.arange(10), atol=1e-12)


def test_self_galerkin_is_diagonal():
    op = galerkin(m_self(), 6)
    D = op.dense()
    np.testing.assert_allclose(D, np.diag(np.diag(D)), atol=1e-14)
    # 1 + |beta| for B = -I in two dimensions
    np.testing.assert_allclose(np.diag(D), 1.0 + op.basis.levels, atol=1e-14)


# defective B: an eigenvalue of a size-m Jordan block is resolved to about eps^(1/m)
@pytest.mark.parametrize("factory, tol", [(m_kramers, 1e-8), (m_ellnn, 1e-3)])
def test_low_lying_eigenvalues_on_lattice(factory, tol):
    m = factory()
    op = galerkin(m, 24)
    low = eigs_lowlying(op, 6, [16, 20, 24])
    lat = lattice_for_L(np.linalg.eigvals(m.B), op.stat.trB, 4.0)
    assert low.lattice_error <= tol
    for z in low.eigenvalues:
        assert lat.distance(np.array([z]))[0] <= tol


def test_degree_blocks_partition():
    op = galerkin(m_kramers(), 8)
    blocks = op.degree_blocks()
    idx = np.concatenate([i for i, _ in blocks])
    assert np.array_equal(np.sort(idx), np.arange(op.size))
    L = op.dense().copy()
    for i, _ in blocks:
        L[np.ix_(i, i)] = 0
    assert np.abs(L).max() <= 1e-13


def test_sigma_min_blockwise_equals_full():
    op = galerkin(m_kramers(), 10)
    for z in (0.3 + 2j, 1.7 - 0.5j, -1.0):
        assert sigma_min(op, z) == pytest.approx(sigma_min_dense(op.dense(), z), rel=1e-10)


def test_simplex_counts():
    for n, d in [(1, 5), (2, 7), (3, 6)]:
        idx = simplex_indices(n, d)
        assert len(idx) == comb(n + d - 1, d) == block_size(n, d)
        assert np.all(idx.sum(axis=1) == d)
        # lexicographic descending order
        keys = [tuple(r) for r in idx]
        assert keys == sorted(keys, reverse=True)


@pytest.mark.parametrize("factory", [m_kramers, m_chain3, m_ellnn])
def test_chaos_blocks_match_box(factory):
    m = factory()
    N = 9 if m.n == 2 else 6
    op = galerkin(m, N)
    cop = chaos_operator(m, op.stat)
    for d, (idx, blk) in enumerate(op.degree_blocks()[:N]):
        box = blk.toarray() if sp.issparse(blk) else blk
        np.testing.assert_allclose(svdvals(cop.block(d, schur=False).toarray()), svdvals(box), atol=1e-12)
        np.testing.assert_allclose(svdvals(cop.block(d).toarray()), svdvals(box), atol=1e-11)


def test_schur_blocks_triangular():
    cop = chaos_operator(m_chain3())
    A = cop.block(7)
    assert sp.tril(A, k=-1).nnz == 0 or np.abs(sp.tril(A, k=-1).data).max() == 0


def test_sigma_min_triangular_matches_dense():
    cop = chaos_operator(m_kramers())
    A = cop.block(120)
    z = 0.5 + 30j
    assert sigma_min_triangular(A, z) == pytest.approx(svdvals(A.toarray() - z * np.eye(A.shape[0])).min(), rel=1e-8)


def test_axis_fit_ou1():
    fit = chaos_axis_exponent(chaos_operator(m_ou1()), 0, D=64)
    assert fit.slope == pytest.approx(-1.0, abs=0.1)
    assert abs(fit.slope - fit.slope_check) <= 0.05


def test_box_axis_fit_ou1():
    fit = imaginary_axis_exponent(galerkin(m_ou1(), 64), 0)
    assert fit.slope == pytest.approx(-1.0, abs=0.1)


def test_block_propagator_matches_expm():
    op = galerkin(m_kramers(), 8)
    c0 = np.random.default_rng(0).standard_normal(op.size)
    prop = BlockPropagator(op, shift=0.3)
    A = op.dense() + 0.3 * np.eye(op.size)
    for t in (0.0, 0.5, 2.0):
        np.testing.assert_allclose(prop.apply(t, c0), expm(-t * A) @ c0, atol=1e-12)
    propT = BlockPropagator(op, transpose=True)
    np.testing.assert_allclose(propT.apply(1.0, c0), expm(-op.dense().T) @ c0, atol=1e-12)


def test_evolution_is_contractive():
    op = galerkin(m_chain3(), 6)
    c0 = np.random.default_rng(1).standard_normal(op.size)
    traj = evolve_coeffs(op, c0, np.linspace(0, 5, 11))
    assert np.all(np.diff(np.linalg.norm(traj, axis=1)) <= 1e-12)


def test_scan_parallel_identical():
    op = galerkin(m_kramers(), 8)
    z = grid_points(-1, 3, -4, 4, 5, 5)
    a = pseudospectrum_scan(op, z, jobs=1)
    b = pseudospectrum_scan(op, z, jobs=2)
    assert np.array_equal(a.sigma_min, b.sigma_min)
    assert a.z.shape == (25,)


def test_ray_probe_norms_grow_near_eigenvalues():
    op = galerkin(m_ou1(), 20)
    norms = ray_probe(op, 0.0 + 0j, 1.0 + 0j, np.array([0.25, 0.49]))
    assert norms[1] > norms[0]
    assert norms[1] == pytest.approx(100.0, rel=1e-8)


def test_k0_used_in_axis_fit_is_chain_index():
    assert compute_k0(m_kramers()).k0 == 1
