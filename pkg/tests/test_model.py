import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ou_spectra.canonical import m_chain3, m_ellnn, m_kramers, m_ou1, m_self, random_stable_model
from ou_spectra.errors import NoInvariantMeasure, NonSquare, NotPSD, NotSymmetric, ValidationError
from ou_spectra.model import (
    compute_k0,
    kalman_rank,
    load_model,
    lyapunov_residual,
    psd_sqrt,
    qinf_quadrature,
    qt,
    qt_vanloan,
    save_model,
    solve_qinf,
    validate_model,
)


def test_validation_rejects_bad_input():
    with pytest.raises(NotSymmetric):
        validate_model([[1, 2], [0, 1]], -np.eye(2))
    with pytest.raises(NotPSD):
        validate_model([[-1.0]], [[-1.0]])
    with pytest.raises(NonSquare):
        validate_model([[1.0, 0.0]], [[-1.0]])
    with pytest.raises(ValidationError):
        validate_model(np.eye(2), -np.eye(3))


def test_model_roundtrip(tmp_path):
    m = m_kramers()
    p = tmp_path / "k.json"
    save_model(m, p)
    m2 = load_model(p)
    assert m2.label == "M_KRAMERS"
    np.testing.assert_array_equal(m2.Q, m.Q)
    np.testing.assert_array_equal(m2.B, m.B)
    assert json.loads(p.read_text())["n"] == 2


@pytest.mark.parametrize(
    "factory, k0, rank",
    [(m_ou1, 0, 1), (m_self, 0, 2), (m_kramers, 1, 2), (m_ellnn, 0, 2), (m_chain3, 2, 3)],
)
def test_k0_canonical(factory, k0, rank):
    m = factory()
    rep = compute_k0(m)
    assert rep.hypoelliptic
    assert rep.k0 == k0
    assert kalman_rank(m) == rank
    assert rep.dims_Vk[-1] == m.n


def test_non_hypoelliptic_flagged():
    m = validate_model(np.diag([1.0, 0.0]), -np.eye(2))
    rep = compute_k0(m, strict=False)
    assert not rep.hypoelliptic and rep.k0 is None
    assert rep.kalman_rank == 1


def test_qinf_closed_forms():
    # OU1: 2 B q + Q = 0 gives q = 1; Kramers: B + B^T = -Q so Qinf = I
    assert solve_qinf(m_ou1()).Qinf[0, 0] == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(solve_qinf(m_kramers()).Qinf, np.eye(2), atol=1e-13)
    np.testing.assert_allclose(solve_qinf(m_self()).Qinf, 0.5 * np.eye(2), atol=1e-14)


def test_unstable_drift_has_no_measure():
    with pytest.raises(NoInvariantMeasure):
        solve_qinf(validate_model(np.eye(2), np.diag([-1.0, 0.5])))


def test_qt_quadrature_matches_vanloan(canonical):
    for t in (0.1, 1.0, 4.0):
        a, b = qt(canonical, t), qt_vanloan(canonical, t)
        assert np.abs(a - b).max() <= 1e-10 * max(1.0, np.abs(b).max())


def test_qt_tends_to_qinf():
    m = m_chain3()
    stat = solve_qinf(m)
    np.testing.assert_allclose(qt_vanloan(m, 80.0), stat.Qinf, atol=1e-12)
    np.testing.assert_allclose(qinf_quadrature(m), stat.Qinf, atol=1e-9)


def test_psd_sqrt_clamps_noise():
    A = np.diag([4.0, 1e-17, -1e-16])
    R = psd_sqrt(A)
    np.testing.assert_allclose(R, np.diag([2.0, 0.0, 0.0]), atol=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lyapunov_random(seed):
    m = random_stable_model(np.random.default_rng(seed))
    stat = solve_qinf(m)
    scale = max(1.0, np.linalg.norm(m.Q, 2), np.linalg.norm(m.B, 2) * np.linalg.norm(stat.Qinf, 2))
    assert lyapunov_residual(m, stat.Qinf) <= 1e-10 * scale
    np.testing.assert_allclose(stat.Qinf, stat.Qinf.T, atol=0)
    assert np.linalg.eigvalsh(stat.Qinf).min() > 0
    assert stat.trB == pytest.approx(np.trace(m.B))
