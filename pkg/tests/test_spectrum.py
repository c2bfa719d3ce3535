import numpy as np
import pytest

from ou_spectra.spectrum import (
    gamma_region,
    halfplane_resolvent_bound,
    lattice_for_L,
    merged_eigenvalues,
    spectrum_lattice,
    tau0,
)


def test_ou1_lattice_is_half_integers():
    lat = lattice_for_L([-1.0], -1.0, 3.0)
    np.testing.assert_allclose(lat.points, 0.5 + np.arange(4), atol=1e-14)


def test_self_lattice_counts():
    lat = spectrum_lattice([-1.0, -1.0], 3.0)
    np.testing.assert_allclose(lat.points, [0, -1, -2, -3], atol=1e-14)
    np.testing.assert_array_equal(lat.rep_counts, [1, 2, 3, 4])


def test_kramers_lattice():
    ev = np.roots([1.0, 1.0, 1.0])
    lat = spectrum_lattice(ev, 2.0)
    # k1 mu + k2 conj(mu), Re = -(k1 + k2)/2 >= -2
    expect = {complex(round(-(a + b) / 2, 12), round((a - b) * np.sqrt(3) / 2, 12)) for a in range(5) for b in range(5) if a + b <= 4}
    got = {complex(round(p.real, 12), round(p.imag, 12)) for p in lat.points}
    assert got == expect
    assert lat.tau0 == pytest.approx(0.5)


def test_jordan_cluster_merged():
    B = np.array([[-1.0, 1.0], [0.0, -1.0]]) + np.array([[0, 0], [1e-14, 0]])
    ev = merged_eigenvalues(np.linalg.eigvals(B))
    np.testing.assert_allclose(ev, [-1.0, -1.0], atol=1e-12)


def test_lattice_distance():
    lat = lattice_for_L([-1.0], -1.0, 3.0)
    assert lat.distance(np.array([1.0 + 1.0j]))[0] == pytest.approx(np.hypot(0.5, 1.0))


def test_tau0_needs_stable():
    with pytest.raises(ValueError):
        tau0([0.5, -1.0])


def test_halfplane_bound():
    assert halfplane_resolvent_bound(-1.0 + 3j, -1.0) is None
    assert halfplane_resolvent_bound(1.0, -1.0) == pytest.approx(2.0)


def test_gamma_region_shape():
    # far up the imaginary direction the region opens like |Im z|^(1/(2k0+1))
    assert gamma_region(-5.0 + 1000j, 1, -1.0, 1.0)
    assert not gamma_region(-50.0 + 10j, 1, -1.0, 1.0)
    assert not gamma_region(2.0, 1, -1.0, 1.0)
    with pytest.raises(ValueError):
        gamma_region(0j, 1, -1.0, 0.0)
