import numpy as np
import pytest

from ou_spectra.canonical import m_chain3, m_kramers, m_ou1
from ou_spectra.errors import NotIntegrable, NotNormalized
from ou_spectra.hermite import galerkin
from ou_spectra.mehler import (
    constant,
    decay_curve,
    distance_to_mean,
    entropy_fit,
    fokker_planck_evolve,
    gaussian_datum,
    gaussian_density,
    gaussian_e2,
    gaussian_fp_closed,
    hermite_semigroup,
    l2mu_inner,
    l2mu_inner_quadrature,
    mehler_apply,
    mu_mean,
    project,
)
from ou_spectra.model import solve_qinf


def _datum(stat, n):
    return gaussian_datum(stat, 0.25 * np.eye(n), 0.5 * np.ones(n), 0.1)


def test_inner_product_closed_form_vs_quadrature(canonical):
    stat = solve_qinf(canonical)
    f = _datum(stat, canonical.n)
    g = gaussian_datum(stat, -0.1 * np.eye(canonical.n), -0.3 * np.ones(canonical.n))
    nodes = 40 if canonical.n < 3 else 24
    assert l2mu_inner(stat, f, g) == pytest.approx(l2mu_inner_quadrature(stat, f, g, nodes), rel=1e-10)


def test_not_integrable():
    stat = solve_qinf(m_ou1())
    with pytest.raises(NotIntegrable):
        gaussian_datum(stat, [[-0.6]])


def test_mehler_fixes_constants():
    m = m_kramers()
    stat = solve_qinf(m)
    one = constant(stat)
    out = mehler_apply(m, stat, one, 2.0)
    assert out(np.array([[0.3, -2.0]]))[0] == pytest.approx(1.0, abs=1e-14)
    assert distance_to_mean(stat, one) == 0.0


def test_semigroup_property(canonical):
    stat = solve_qinf(canonical)
    f = _datum(stat, canonical.n)
    a = mehler_apply(canonical, stat, mehler_apply(canonical, stat, f, 0.7), 1.3)
    b = mehler_apply(canonical, stat, f, 2.0)
    np.testing.assert_allclose(a.M, b.M, atol=1e-12)
    np.testing.assert_allclose(a.b, b.b, atol=1e-12)
    assert a.c == pytest.approx(b.c, abs=1e-12)


def test_mean_is_invariant(canonical):
    stat = solve_qinf(canonical)
    f = _datum(stat, canonical.n)
    m0 = mu_mean(stat, f)
    for t in (0.5, 3.0):
        assert mu_mean(stat, mehler_apply(canonical, stat, f, t)) == pytest.approx(m0, rel=1e-12)


def test_distance_matches_direct_formula():
    stat = solve_qinf(m_ou1())
    f = _datum(stat, 1)
    direct = np.sqrt(l2mu_inner(stat, f, f) - mu_mean(stat, f) ** 2)
    assert distance_to_mean(stat, f) == pytest.approx(direct, rel=1e-12)


def test_ou1_decay_rate():
    m = m_ou1()
    stat = solve_qinf(m)
    dc = decay_curve(m, stat, _datum(stat, 1), np.linspace(0, 30, 601))
    assert dc.rate == pytest.approx(1.0, abs=0.02)
    assert np.all(np.diff(dc.distance) <= 1e-15)


def test_mehler_equals_hermite_evolution():
    m = m_kramers()
    stat = solve_qinf(m)
    f = _datum(stat, 2)
    op = galerkin(m, 40, stat)
    t = np.array([0.0, 0.5, 2.0])
    _, traj = hermite_semigroup(op, f, t)
    from ou_spectra.mehler import hermite_polynomials

    x = np.random.default_rng(0).standard_normal((5, 2)) @ stat.Qinf_sqrt.T
    H = hermite_polynomials(op.basis, x)
    for k, tk in enumerate(t):
        exact = mehler_apply(m, stat, f, tk)(x)
        np.testing.assert_allclose(H @ traj[k], exact, rtol=1e-8)


def test_projection_of_polynomial_is_exact():
    m = m_kramers()
    stat = solve_qinf(m)
    op = galerkin(m, 6, stat)
    c = project(stat, op.basis, lambda X: np.ones(len(X)))
    assert c[0] == pytest.approx(1.0, abs=1e-14)
    assert np.abs(c[1:]).max() <= 1e-13


def test_fokker_planck_matches_gaussian_closed_form():
    m = m_ou1()
    stat = solve_qinf(m)
    op = galerkin(m, 40, stat)
    mean, cov = np.array([0.4]), stat.Qinf
    t = np.linspace(0.0, 4.0, 5)
    state = fokker_planck_evolve(op, gaussian_density(mean, cov), t)
    assert np.abs(state.mass - 1).max() <= 1e-12
    for k, tk in enumerate(t):
        mk, ck = gaussian_fp_closed(m, mean, cov, tk)
        assert state.e2[k] == pytest.approx(gaussian_e2(stat, mk, ck), rel=1e-8, abs=1e-20)


def test_fokker_planck_rejects_unnormalized():
    m = m_ou1()
    stat = solve_qinf(m)
    op = galerkin(m, 10, stat)
    g = gaussian_density([0.0], stat.Qinf)
    with pytest.raises(NotNormalized):
        fokker_planck_evolve(op, lambda X: 2 * g(X), [0.0, 1.0])


def test_entropy_rate_kramers():
    m = m_kramers()
    stat = solve_qinf(m)
    op = galerkin(m, 40, stat)
    state = fokker_planck_evolve(op, gaussian_density([0.3, 0.3], stat.Qinf), np.linspace(0, 40, 401))
    rate, _ = entropy_fit(state, m)
    assert rate == pytest.approx(1.0, abs=0.05)


def test_stationary_density_has_zero_entropy():
    m = m_chain3()
    stat = solve_qinf(m)
    e2 = gaussian_e2(stat, np.zeros(3), stat.Qinf)
    assert abs(e2) <= 1e-14
