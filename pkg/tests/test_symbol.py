import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ou_spectra.canonical import m_chain3, m_ellnn, m_kramers, m_ou1, m_self, random_stable_model
from ou_spectra.errors import NotElliptic
from ou_spectra.model import compute_k0, solve_qinf
from ou_spectra.symbol import (
    build_symbol,
    degenerate_witness,
    hamilton_map,
    hamilton_spectrum,
    normality_test,
    numerical_range_sector,
    poisson_bracket,
    poisson_bracket_closed,
    sector_sampling_oracle,
    sigma,
    singular_space,
    symplectic_matrix,
    tau0_from_hamilton,
)


def _pipeline(m):
    stat = solve_qinf(m)
    sym = build_symbol(m, stat)
    return stat, sym, hamilton_map(sym)


def test_symbol_real_part_psd_and_imaginary_trace_free(canonical):
    _, sym, _ = _pipeline(canonical)
    assert np.linalg.eigvalsh(sym.re_coeff).min() >= -1e-13
    assert abs(np.trace(sym.drift)) <= 1e-12


def test_hamilton_map_polarization(canonical, rng):
    _, sym, h = _pipeline(canonical)
    n = canonical.n
    for _ in range(10):
        X, Y = rng.standard_normal(2 * n), rng.standard_normal(2 * n)
        assert sym.polarized(X, Y) == pytest.approx(sigma(X, h.F @ Y), abs=1e-12)
    J = symplectic_matrix(n)
    assert sigma(X, Y) == pytest.approx(X @ J @ Y)


def test_kramers_symbol_by_hand():
    # Qinf = I: q = xi2^2 + x2^2/4 - i <(B + Q/2) x, xi>, with B + Q/2 = [[0,1],[-1,0]]
    _, sym, _ = _pipeline(m_kramers())
    x, xi = np.array([0.3, -1.1]), np.array([0.7, 2.0])
    expect = xi[1] ** 2 + x[1] ** 2 / 4 - 1j * (x[1] * xi[0] - x[0] * xi[1])
    assert sym(x, xi) == pytest.approx(expect, abs=1e-14)


@pytest.mark.parametrize("factory, index", [(m_ou1, 0), (m_self, 0), (m_kramers, 1), (m_ellnn, 0), (m_chain3, 2)])
def test_singular_space_trivial_for_hypoelliptic(factory, index):
    m = factory()
    _, sym, h = _pipeline(m)
    ss = singular_space(h, sym)
    assert ss.dim == 0
    assert ss.chain_index == index == compute_k0(m).k0


def test_hamilton_spectrum_matches_drift(canonical):
    stat, _, h = _pipeline(canonical)
    hs = hamilton_spectrum(h, canonical, stat)
    assert hs.mismatch <= 1e-8 * hs.scale
    assert hs.block_residual <= 1e-10


def test_tau0_from_hamilton():
    _, _, h = _pipeline(m_kramers())
    assert tau0_from_hamilton(h) == pytest.approx(0.5, abs=1e-12)


def test_normality():
    for factory, normal in [(m_self, True), (m_ou1, True), (m_ellnn, False), (m_kramers, False)]:
        m = factory()
        assert normality_test(m, solve_qinf(m)).is_normal is normal
    m = m_self()
    assert normality_test(m, solve_qinf(m)).commutator_norm == 0.0


def test_sector_matches_sampling_oracle():
    m = m_ellnn()
    stat = solve_qinf(m)
    lo, hi = numerical_range_sector(m, stat)
    olo, ohi = sector_sampling_oracle(m, stat, samples=20_000)
    assert lo == pytest.approx(olo, abs=1e-6) and hi == pytest.approx(ohi, abs=1e-6)
    assert lo == pytest.approx(-hi)


def test_sector_requires_elliptic():
    m = m_kramers()
    with pytest.raises(NotElliptic):
        numerical_range_sector(m, solve_qinf(m))


def test_poisson_bracket_closed_form(canonical, rng):
    _, sym, _ = _pipeline(canonical)
    for _ in range(5):
        x, xi = rng.standard_normal((2, canonical.n))
        a, b = poisson_bracket(sym, x, xi), poisson_bracket_closed(sym, x, xi)
        assert a == pytest.approx(b, rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("factory", [m_kramers, m_chain3])
def test_degenerate_witness(factory):
    m = factory()
    stat, sym, _ = _pipeline(m)
    for z in (1.0 + 2.0j, 0.3 - 5.0j):
        w = degenerate_witness(m, stat, z)
        assert sym(w.x0, w.xi0) == pytest.approx(z, abs=1e-8 * max(1, abs(z)))
        assert w.bracket < 0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_hamilton_spectrum(seed):
    m = random_stable_model(np.random.default_rng(seed))
    stat, _, h = _pipeline(m)
    hs = hamilton_spectrum(h, m, stat)
    assert hs.mismatch <= 1e-8 * hs.scale
