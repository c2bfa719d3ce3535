"""Closed-form OU semigroup on Gaussian data, L2(mu) decay curves and Fokker-Planck entropy.

Test functions are f(x) = exp(-1/2 <M x, x> + <b, x> + c). This family is
closed under the Kolmogorov formula (T(t) f)(x) = E[f(e^{tB} x + y)], y ~ N(0, Q_t).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.linalg import expm

from .errors import FitWindowEmpty, InvariantViolation, NotIntegrable, NotNormalized
from .hermite import BlockPropagator, GalerkinOperator, HermiteBasis
from .model import OUModel, StationaryData, psd_sqrt, qt_vanloan


@dataclass(frozen=True, eq=False)
class GaussianDatum:
    M: np.ndarray
    b: np.ndarray
    c: float = 0.0

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        q = np.einsum("ij,jk,ik->i", x, self.M, x)
        return np.exp(-0.5 * q + x @ self.b + self.c)

    def log_value(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        return -0.5 * np.einsum("ij,jk,ik->i", x, self.M, x) + x @ self.b + self.c


def gaussian_datum(stat: StationaryData, M=None, b=None, c: float = 0.0) -> GaussianDatum:
    """Datum with membership in L2(mu) checked: M + Qinf^-1 / 2 must be positive definite."""
    n = stat.n
    M = np.zeros((n, n)) if M is None else np.asarray(M, float)
    b = np.zeros(n) if b is None else np.asarray(b, float)
    M = 0.5 * (M + M.T)
    if np.linalg.eigvalsh(M + 0.5 * stat.Qinf_inv).min() <= 0:
        raise NotIntegrable("f is not square integrable against the invariant measure")
    return GaussianDatum(M=M, b=b, c=float(c))


def constant(stat: StationaryData, value: float = 1.0) -> GaussianDatum:
    return gaussian_datum(stat, c=np.log(value))


def mehler_apply(model: OUModel, stat: StationaryData, f: GaussianDatum, t: float) -> GaussianDatum:
    """Parameters of T(t) f, completing the square in the Gaussian convolution."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return f
    n = model.n
    E = expm(t * model.B)
    S = qt_vanloan(model, t)
    R = psd_sqrt(S)
    # integrability of the convolution: Q_t^-1 + M > 0 on Ran Q_t
    G = np.eye(n) + R @ f.M @ R
    if np.linalg.eigvalsh(0.5 * (G + G.T)).min() <= 0:
        raise NotIntegrable("Gaussian convolution diverges")
    I = np.eye(n)
    K = np.linalg.solve(I + f.M @ S, np.column_stack([f.M, f.b]))
    Mu, bu = K[:, :n], K[:, n]
    Mu = 0.5 * (Mu + Mu.T)
    _, logdet = np.linalg.slogdet(0.5 * (G + G.T))
    Sb = np.linalg.solve(I + S @ f.M, S @ f.b)
    c = f.c + 0.5 * f.b @ Sb - 0.5 * logdet
    M_new = E.T @ Mu @ E
    return GaussianDatum(M=0.5 * (M_new + M_new.T), b=E.T @ bu, c=float(c))


def l2mu_inner(stat: StationaryData, f: GaussianDatum, g: GaussianDatum) -> float:
    """Integral of f g against the invariant measure."""
    P = f.M + g.M + stat.Qinf_inv
    P = 0.5 * (P + P.T)
    w = np.linalg.eigvalsh(P)
    if w.min() <= 0:
        raise NotIntegrable("f g is not integrable against mu")
    b = f.b + g.b
    _, ld_q = np.linalg.slogdet(stat.Qinf)
    log_val = -0.5 * ld_q - 0.5 * np.sum(np.log(w)) + 0.5 * b @ np.linalg.solve(P, b) + f.c + g.c
    return float(np.exp(log_val))


def gauss_hermite_grid(stat: StationaryData, nodes: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tensor Gauss-Hermite rule for mu: points x, whitened points w and weights."""
    y, wts = hermegauss(nodes)
    wts = wts / np.sqrt(2 * np.pi)
    n = stat.n
    grids = np.meshgrid(*([y] * n), indexing="ij")
    W = np.stack([g.ravel() for g in grids], axis=1)
    wg = np.meshgrid(*([wts] * n), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wg], axis=1), axis=1)
    X = W @ stat.Qinf_sqrt.T
    return X, W, weights


def l2mu_inner_quadrature(stat: StationaryData, f: GaussianDatum, g: GaussianDatum, nodes: int = 60) -> float:
    X, _, wts = gauss_hermite_grid(stat, nodes)
    return float(np.sum(wts * np.exp(f.log_value(X) + g.log_value(X))))


def mu_mean(stat: StationaryData, f: GaussianDatum) -> float:
    return l2mu_inner(stat, constant(stat), f)


def distance_to_mean(stat: StationaryData, f: GaussianDatum) -> float:
    """||f - mean_mu(f)||_{L2(mu)} without the cancellation of <f,f> - mean^2.

    In whitened coordinates K = Qinf^1/2 M Qinf^1/2 with eigenvalues kappa and
    bh the coordinates of Qinf^1/2 b in its eigenbasis,

        ||f||^2 / mean^2 = exp(sum log1p(kappa^2/(1+2 kappa))/2 + sum bh^2/((1+2 kappa)(1+kappa))).
    """
    S = stat.Qinf_sqrt
    K = S @ f.M @ S
    kappa, U = np.linalg.eigh(0.5 * (K + K.T))
    if np.any(1 + 2 * kappa <= 0):
        raise NotIntegrable("f is not in L2(mu)")
    bh = U.T @ (S @ f.b)
    r = 0.5 * np.sum(np.log1p(kappa**2 / (1 + 2 * kappa))) + np.sum(bh**2 / ((1 + 2 * kappa) * (1 + kappa)))
    m = mu_mean(stat, f)
    return float(abs(m) * np.sqrt(np.expm1(r)))


@dataclass(eq=False)
class DecayCurve:
    t: np.ndarray
    distance: np.ndarray
    rate: float
    window: tuple[float, float]
    constant: float
    tau: float
    meta: dict = field(default_factory=dict)


def fit_rate(t: np.ndarray, d: np.ndarray, lo: float = 1e-8, hi: float = 1e-2, min_span: float = 0.0) -> tuple[float, tuple[float, float], float]:
    """OLS slope of log d over the window lo*d0 <= d <= hi*d0; returns (rate, window, intercept)."""
    d0 = d[0]
    mask = (d >= lo * d0) & (d <= hi * d0) & (d > 0)
    if mask.sum() < 3:
        raise FitWindowEmpty("fewer than three samples in the fit window")
    tw = t[mask]
    if tw[-1] - tw[0] < min_span:
        raise FitWindowEmpty(f"window length {tw[-1] - tw[0]:.3g} shorter than required {min_span:.3g}")
    slope, icpt = np.polyfit(tw, np.log(d[mask]), 1)
    return float(-slope), (float(tw[0]), float(tw[-1])), float(icpt)


def oscillation_span(model: OUModel, periods: float = 3.0) -> float:
    """Length of ``periods`` oscillations of the slowest complex drift modes, or 0."""
    ev = np.linalg.eigvals(model.B)
    top = ev[np.isclose(ev.real, ev.real.max(), atol=1e-8)]
    im = np.abs(top.imag).max()
    return periods * 2 * np.pi / im if im > 1e-12 else 0.0


def check_exponential_bound(t: np.ndarray, d: np.ndarray, tau: float) -> float:
    """C with d(t) <= C e^{-tau t} d(0) on the grid; the bound must not deteriorate in time."""
    d0 = d[0]
    if d0 == 0:
        return 0.0
    g = d * np.exp(tau * t) / d0
    # polynomial prefactors from Jordan blocks may delay the maximum, but it
    # has to be reached before the end of the horizon
    if len(g) > 2 and np.argmax(g) == len(g) - 1:
        raise InvariantViolation(f"d(t) e^(tau t) still growing at tau = {tau:.4g}")
    return float(g.max())


def decay_curve(model: OUModel, stat: StationaryData, f: GaussianDatum, t_grid, tau0: float | None = None, lo: float = 1e-8, hi: float = 1e-2) -> DecayCurve:
    """L2(mu) distance of T(t) f to its mean, with fitted exponential rate."""
    t = np.asarray(t_grid, float)
    d = np.array([distance_to_mean(stat, mehler_apply(model, stat, f, s)) for s in t])
    if tau0 is None:
        tau0 = -float(np.linalg.eigvals(model.B).real.max())
    if d[0] == 0:
        return DecayCurve(t=t, distance=d, rate=np.inf, window=(0.0, 0.0), constant=0.0, tau=0.95 * tau0)
    if t.size == 1:
        return DecayCurve(t=t, distance=d, rate=np.nan, window=(0.0, 0.0), constant=1.0, tau=0.95 * tau0)
    rate, window, _ = fit_rate(t, d, lo, hi, min_span=oscillation_span(model))
    C = check_exponential_bound(t, d, 0.95 * tau0)
    return DecayCurve(t=t, distance=d, rate=rate, window=window, constant=C, tau=0.95 * tau0)


# Hermite-side evaluation -------------------------------------------------


def _hermite_1d(N: int, y: np.ndarray) -> np.ndarray:
    """Orthonormal probabilists' Hermite polynomials h_0..h_{N-1} at y, shape (N, len(y))."""
    h = np.zeros((N, y.size))
    h[0] = 1.0
    if N > 1:
        h[1] = y
    for k in range(1, N - 1):
        h[k + 1] = (y * h[k] - np.sqrt(k) * h[k - 1]) / np.sqrt(k + 1)
    return h


def hermite_polynomials(basis: HermiteBasis, x) -> np.ndarray:
    """Orthonormal polynomials h_beta(w) in L2(mu) at points x, shape (m, N^n)."""
    x = np.atleast_2d(np.asarray(x, float))
    w = x @ basis.Qinf_isqrt.T
    out = np.ones((w.shape[0], basis.size))
    for j in range(basis.n):
        out *= _hermite_1d(basis.N, w[:, j])[basis.index_map[:, j]].T
    return out


def project(stat: StationaryData, basis: HermiteBasis, func, nodes: int | None = None) -> np.ndarray:
    """Coefficients <func, h_beta>_mu by tensor Gauss-Hermite quadrature.

    The rule is a tensor product in whitened coordinates, so the sum is
    contracted one axis at a time.
    """
    nodes = nodes or max(2 * basis.N + 10, 40)
    X, _, wts = gauss_hermite_grid(stat, nodes)
    F = (func(X) * wts).reshape((nodes,) * basis.n)
    y, _ = hermegauss(nodes)
    H1 = _hermite_1d(basis.N, y)
    for j in range(basis.n):
        F = np.moveaxis(np.tensordot(H1, F, axes=([1], [j])), 0, j)
    return F.ravel()


def hermite_semigroup(op: GalerkinOperator, f, t_grid, nodes: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient trajectories of T(t) f = e^{-t(L + Tr B/2)} in the L2(mu) basis."""
    c0 = project(op.stat, op.basis, f, nodes)
    shift = 0.5 * op.stat.trB
    prop = BlockPropagator(op, shift=shift)
    t_grid = np.asarray(t_grid, float)
    return c0, prop.trajectory(t_grid, c0)


# Fokker-Planck -----------------------------------------------------------


@dataclass(eq=False)
class FokkerPlanckState:
    t: np.ndarray
    coeffs: np.ndarray
    mass: np.ndarray
    e2: np.ndarray
    basis: HermiteBasis

    def density(self, k: int, x, stat: StationaryData) -> np.ndarray:
        from .model import density_rho

        return density_rho(stat, x) * (hermite_polynomials(self.basis, x) @ self.coeffs[k])


def entropy_e2(coeffs: np.ndarray) -> float:
    """e2(f|rho) from the coefficients of f/rho in the L2(mu) basis."""
    c = np.asarray(coeffs)
    return float(np.sum(c[1:] ** 2) + (c[0] - 1.0) ** 2)


def fokker_planck_evolve(op: GalerkinOperator, f0, t_grid, nodes: int | None = None, require_normalized: bool = True) -> FokkerPlanckState:
    """e^{t P_FP} f0 through the conjugation with the transpose of the L matrix.

    ``f0`` is a callable density on R^n. Its ratio h = f0/rho is expanded in
    the orthonormal polynomials of L2(mu) and evolved by e^{-t(L^T + Tr B/2)}.
    """
    from .model import log_density

    stat = op.stat

    def ratio(X):
        return np.exp(np.log(f0(X)) - log_density(stat, X))

    d0 = project(stat, op.basis, ratio, nodes)
    if require_normalized and abs(d0[0] - 1.0) > 1e-8:
        raise NotNormalized(f"initial mass {d0[0]:.12g} != 1")
    shift = 0.5 * stat.trB
    prop = BlockPropagator(op, shift=shift, transpose=True)
    t_grid = np.asarray(t_grid, float)
    traj = prop.trajectory(t_grid, d0)
    mass = traj[:, 0].copy()
    if require_normalized and np.abs(mass - 1.0).max() > 1e-8:
        raise NotNormalized(f"mass drifted to {mass[np.argmax(np.abs(mass - 1))]:.12g}")
    e2 = np.array([entropy_e2(c) for c in traj])
    return FokkerPlanckState(t=t_grid, coeffs=traj, mass=mass, e2=e2, basis=op.basis)


def gaussian_density(mean, cov):
    """Callable N(mean, cov) density."""
    mean = np.asarray(mean, float)
    cov = np.asarray(cov, float)
    n = mean.size
    ci = np.linalg.inv(cov)
    _, ld = np.linalg.slogdet(cov)

    def f(X):
        X = np.atleast_2d(X) - mean
        return np.exp(-0.5 * np.einsum("ij,jk,ik->i", X, ci, X) - 0.5 * ld - 0.5 * n * np.log(2 * np.pi))

    return f


def gaussian_fp_closed(model: OUModel, mean, cov, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Law at time t of the OU process started from N(mean, cov)."""
    E = expm(t * model.B)
    return E @ np.asarray(mean, float), E @ np.asarray(cov, float) @ E.T + qt_vanloan(model, t)


def gaussian_e2(stat: StationaryData, mean, cov) -> float:
    """e2(g|rho) = int g^2/rho - 1 for g = N(mean, cov), in closed form."""
    mean = np.asarray(mean, float)
    cov = np.asarray(cov, float)
    ci = np.linalg.inv(cov)
    P = 2 * ci - stat.Qinf_inv
    w = np.linalg.eigvalsh(0.5 * (P + P.T))
    if w.min() <= 0:
        raise NotIntegrable("g^2/rho is not integrable")
    b = 2 * ci @ mean
    _, ld_c = np.linalg.slogdet(cov)
    _, ld_q = np.linalg.slogdet(stat.Qinf)
    log_int = -ld_c + 0.5 * ld_q - 0.5 * np.sum(np.log(w)) + 0.5 * b @ np.linalg.solve(P, b) - mean @ ci @ mean
    return float(np.expm1(log_int))


def entropy_fit(state: FokkerPlanckState, model: OUModel, lo: float = 1e-12, hi: float = 1e-2) -> tuple[float, tuple[float, float]]:
    rate, window, _ = fit_rate(state.t, state.e2, lo, hi)
    return rate, window
