"""Weyl symbol, Hamilton map and the phase-space analysis of the conjugated operator.

The conjugated operator ``L = -sqrt(rho) P (sqrt(rho)^-1 .) - Tr(B)/2`` is the
Weyl quantization of

    q(x, xi) = 1/2 |Q^1/2 xi|^2 + 1/8 |Q^1/2 Qinf^-1 x|^2 - i <(1/2 Q Qinf^-1 + B) x, xi>

and we store it as a complex symmetric 2n x 2n matrix acting on X = (x, xi).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.optimize import linear_sum_assignment, minimize

from .errors import (
    ChainMismatch,
    InvariantViolation,
    NotDegenerate,
    NotElliptic,
    SpectrumMismatch,
    WitnessSearchFailed,
)
from .model import RANK_RTOL, OUModel, StationaryData, null_space, psd_sqrt


CLUSTER_TOL = 1e-4


@dataclass(eq=False)
class QuadraticSymbol:
    coeff: np.ndarray
    Q: np.ndarray
    B: np.ndarray
    Qinf_inv: np.ndarray

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def re_coeff(self) -> np.ndarray:
        return self.coeff.real

    @property
    def im_coeff(self) -> np.ndarray:
        return self.coeff.imag

    @property
    def drift(self) -> np.ndarray:
        """The matrix 1/2 Q Qinf^-1 + B of the imaginary part."""
        return 0.5 * self.Q @ self.Qinf_inv + self.B

    def __call__(self, x, xi) -> complex:
        X = np.concatenate([np.asarray(x, float), np.asarray(xi, float)])
        return complex(X @ self.coeff @ X)

    def polarized(self, X, Y) -> complex:
        return complex(np.asarray(X) @ self.coeff @ np.asarray(Y))


@dataclass(eq=False)
class HamiltonMap:
    F: np.ndarray

    @property
    def reF(self) -> np.ndarray:
        return self.F.real

    @property
    def imF(self) -> np.ndarray:
        return self.F.imag

    @property
    def n(self) -> int:
        return self.F.shape[0] // 2


@dataclass(eq=False)
class SingularSpaceResult:
    dim: int
    basis: np.ndarray
    chain_dims: list[int]
    chain_index: int


@dataclass(eq=False)
class NormalityResult:
    commutator: np.ndarray
    is_normal: bool
    commutator_symbol: QuadraticSymbol
    commutator_norm: float


def symplectic_matrix(n: int) -> np.ndarray:
    """J with sigma(X, Y) = X^T J Y = <xi, y> - <x, eta>."""
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = -np.eye(n)
    J[n:, :n] = np.eye(n)
    return J


def sigma(X, Y) -> complex:
    X = np.asarray(X)
    Y = np.asarray(Y)
    n = X.shape[0] // 2
    return X[n:] @ Y[:n] - X[:n] @ Y[n:]


def symbol_from_matrices(Q, B, Qinf_inv) -> QuadraticSymbol:
    """Symbol coefficient matrix for arbitrary (Q, B, Qinf^-1), no measure required."""
    Q = np.asarray(Q, float)
    B = np.asarray(B, float)
    Qi = np.asarray(Qinf_inv, float)
    n = Q.shape[0]
    A = 0.5 * Q @ Qi + B
    C = np.zeros((2 * n, 2 * n), dtype=complex)
    xx = Qi @ Q @ Qi / 8.0
    C[:n, :n] = 0.5 * (xx + xx.T)
    C[n:, n:] = 0.5 * Q
    C[n:, :n] = -0.5j * A
    C[:n, n:] = -0.5j * A.T
    return QuadraticSymbol(coeff=C, Q=Q, B=B, Qinf_inv=Qi)


def build_symbol(model: OUModel, stat: StationaryData) -> QuadraticSymbol:
    sym = symbol_from_matrices(model.Q, model.B, stat.Qinf_inv)
    scale = max(1.0, np.linalg.norm(model.Q, 2) * np.linalg.norm(stat.Qinf_inv, 2) + np.linalg.norm(model.B, 2))
    if np.linalg.eigvalsh(sym.re_coeff).min() < -1e-12 * scale:
        raise InvariantViolation("Re q is not positive semi-definite")
    if abs(np.trace(sym.drift)) > 1e-10 * scale:
        raise InvariantViolation(f"Tr(Q Qinf^-1 / 2 + B) = {np.trace(sym.drift):.3e}")
    return sym


def hamilton_map(sym: QuadraticSymbol, checks: int = 100, seed: int = 0) -> HamiltonMap:
    """F = J^-1 C, so that q(X; Y) = sigma(X, F Y); checked against the closed form."""
    n = sym.n
    J = symplectic_matrix(n)
    F = -J @ sym.coeff
    Q, Qi, B = sym.Q, sym.Qinf_inv, sym.B
    K = Q @ Qi + 2.0 * B
    closed = np.block([[-0.25j * K, 0.5 * Q], [-Qi @ Q @ Qi / 8.0, 0.25j * K.T]])
    scale = max(1.0, np.abs(closed).max())
    if np.abs(F - closed).max() > 1e-12 * scale:
        raise InvariantViolation("Hamilton map differs from its block closed form")
    rng = np.random.default_rng(seed)
    for _ in range(checks):
        X, Y = rng.standard_normal((2, 2 * n))
        lhs = sym.polarized(X, Y)
        rhs = sigma(X, F @ Y)
        if abs(lhs - rhs) > 1e-12 * scale * (1 + np.abs(X).max() * np.abs(Y).max()) * 2 * n:
            raise InvariantViolation("sigma(X, FY) != q(X; Y)")
    return HamiltonMap(F=F)


def _kernel_chain(mats: list[np.ndarray], dim: int, rtol: float = RANK_RTOL):
    """Successive intersections of kernels; returns (dims, final basis)."""
    N = np.eye(dim)
    dims = []
    for M in mats:
        if N.shape[1]:
            MN = M @ N
            nrm = np.linalg.norm(M, 2)
            if nrm > 0 and np.linalg.norm(MN, 2) > rtol * nrm:
                _, s, Vh = np.linalg.svd(MN, full_matrices=True)
                r = int(np.sum(s > rtol * nrm))
                N = N @ Vh[r:].T
        dims.append(N.shape[1])
    if N.shape[1]:
        N, _ = np.linalg.qr(N)
    return dims, N


def singular_space(h: HamiltonMap, sym: QuadraticSymbol | None = None) -> SingularSpaceResult:
    """S = intersection of Ker[Re F (Im F)^j], j < 2n, restricted to R^2n.

    When the symbol is supplied the result is compared with the Kalman-kernel
    description {Q Qinf^-1 B^j x = 0, Q (B^T)^j xi = 0, j < n}.
    """
    n = h.n
    reF, imF = h.reF, h.imF
    mats = []
    P = np.eye(2 * n)
    for _ in range(2 * n):
        mats.append(reF @ P)
        P = imF @ P
    chain_dims, basis = _kernel_chain(mats, 2 * n)
    dim = chain_dims[-1]
    chain_index = next(k for k, d in enumerate(chain_dims) if d == dim)
    if sym is not None:
        Q, Qi, B = sym.Q, sym.Qinf_inv, sym.B
        xm, xim = [], []
        Bj = np.eye(n)
        for _ in range(n):
            xm.append(Q @ Qi @ Bj)
            xim.append(Q @ Bj.T)
            Bj = B @ Bj
        _, Nx = _kernel_chain(xm, n)
        _, Nxi = _kernel_chain(xim, n)
        other = np.zeros((2 * n, Nx.shape[1] + Nxi.shape[1]))
        other[:n, : Nx.shape[1]] = Nx
        other[n:, Nx.shape[1] :] = Nxi
        if other.shape[1] != dim:
            raise ChainMismatch(f"chain gives dim {dim}, Kalman kernels give {other.shape[1]}")
        if dim:
            Pa = basis @ basis.T
            Pb = other @ other.T
            if np.abs(Pa - Pb).max() > 1e-6:
                raise ChainMismatch("chain and Kalman-kernel subspaces differ")
    return SingularSpaceResult(dim=dim, basis=basis, chain_dims=chain_dims, chain_index=chain_index)


def normality_test(model: OUModel, stat: StationaryData, rtol: float = 1e-10) -> NormalityResult:
    """[Qinf^-1 Q, B^T] and the symbol of [L, L*]."""
    Q, B, Qi = model.Q, model.B, stat.Qinf_inv
    QiQ = Qi @ Q
    comm = QiQ @ B.T - B.T @ QiQ
    scale = max(1e-300, np.linalg.norm(QiQ, "fro") * np.linalg.norm(B, "fro"))
    cnorm = float(np.linalg.norm(comm, "fro"))
    is_normal = cnorm <= rtol * scale
    W = Q @ Qi @ Q + 2.0 * Q @ B.T
    Ws = 0.5 * (W + W.T)
    n = model.n
    coeff = np.zeros((2 * n, 2 * n), dtype=complex)
    xx = 0.25 * Qi @ Ws @ Qi
    coeff[:n, :n] = 0.5 * (xx + xx.T)
    coeff[n:, n:] = Ws
    csym = QuadraticSymbol(coeff=coeff, Q=Q, B=B, Qinf_inv=Qi)
    sym_zero = np.linalg.norm(Ws, "fro") <= rtol * scale * max(1.0, np.linalg.norm(stat.Qinf, 2))
    if sym_zero != is_normal:
        raise InvariantViolation("commutator criterion and commutator symbol disagree")
    return NormalityResult(commutator=comm, is_normal=bool(is_normal), commutator_symbol=csym, commutator_norm=cnorm)


def poisson_bracket(sym: QuadraticSymbol, x, xi) -> float:
    """{Re q, Im q}(x, xi) = <d_xi Re q, d_x Im q> - <d_x Re q, d_xi Im q>."""
    n = sym.n
    X = np.concatenate([np.asarray(x, float), np.asarray(xi, float)])
    gR = 2.0 * sym.re_coeff @ X
    gI = 2.0 * sym.im_coeff @ X
    return float(gR[n:] @ gI[:n] - gR[:n] @ gI[n:])


def poisson_bracket_closed(sym: QuadraticSymbol, x, xi) -> float:
    """Same bracket from the closed form of 2{Im q, Re q}, i.e. -1/2 times it."""
    Q, Qi, B = sym.Q, sym.Qinf_inv, sym.B
    x = np.asarray(x, float)
    xi = np.asarray(xi, float)
    K = 0.5 * Q @ Qi @ Q + Q @ B.T
    y = Qi @ x
    two_im_re = 0.5 * y @ K @ y + 2.0 * xi @ K @ xi
    return -0.5 * float(two_im_re)


def _cluster_means(vals: np.ndarray, tol: float) -> np.ndarray:
    """Replace each cluster of nearby eigenvalues by its mean (defective blocks split)."""
    vals = np.asarray(vals, complex).copy()
    used = np.zeros(len(vals), bool)
    for i in range(len(vals)):
        if used[i]:
            continue
        grp = np.where((~used) & (np.abs(vals - vals[i]) <= tol))[0]
        vals[grp] = vals[grp].mean()
        used[grp] = True
    return vals


def match_multisets(a, b) -> float:
    """Largest distance in the optimal one-to-one matching of two multisets."""
    a = np.asarray(a, complex)
    b = np.asarray(b, complex)
    if a.shape != b.shape:
        return np.inf
    D = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(D)
    return float(D[r, c].max()) if len(r) else 0.0


def conjugation_matrices(stat: StationaryData, B: np.ndarray):
    """The block-diagonal G and the conjugated matrix calM = G F G^-1."""
    n = B.shape[0]
    G = np.zeros((2 * n, 2 * n))
    G[:n, :n] = stat.Qinf_isqrt / np.sqrt(2.0)
    G[n:, n:] = np.sqrt(2.0) * stat.Qinf_sqrt
    M = -0.5j * stat.Qinf_isqrt @ B @ stat.Qinf_sqrt
    S = 0.5 * (M - M.T)
    P = 0.5 * (M + M.T)
    calM = np.block([[S, -1j * P], [1j * P, S]])
    return G, M, calM


def block_action_residual(M: np.ndarray, calM: np.ndarray, rng: np.random.Generator, trials: int = 100) -> float:
    """Worst residual of (calM - mu)(X, +-iX) against the two closed forms."""
    n = M.shape[0]
    worst = 0.0
    I = np.eye(n)
    for _ in range(trials):
        X = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        mu = complex(rng.standard_normal(), rng.standard_normal())
        lhs = (calM - mu * np.eye(2 * n)) @ np.concatenate([X, 1j * X])
        Y = (M - mu * I) @ X
        rhs = np.concatenate([Y, 1j * Y])
        lhs2 = (calM - mu * np.eye(2 * n)) @ np.concatenate([X, -1j * X])
        Z = (M.T + mu * I) @ X
        rhs2 = -np.concatenate([Z, -1j * Z])
        scale = 1 + np.abs(X).max() * (np.abs(calM).max() + abs(mu))
        worst = max(worst, np.abs(lhs - rhs).max() / scale, np.abs(lhs2 - rhs2).max() / scale)
    return worst


@dataclass(eq=False)
class HamiltonSpectrum:
    eigenvalues: np.ndarray
    predicted: np.ndarray
    mismatch: float
    conjugation_residual: float
    block_residual: float
    scale: float = 1.0


def hamilton_spectrum(h: HamiltonMap, model: OUModel, stat: StationaryData, tol: float = 1e-8, seed: int = 0) -> HamiltonSpectrum:
    """Eigenvalues of F, checked against (+-i/2) sigma(B) with multiplicities."""
    ev = np.linalg.eigvals(h.F)
    eB = np.linalg.eigvals(model.B)
    pred = np.concatenate([0.5j * eB, -0.5j * eB])
    # eigenvalues of the stored F are only defined to about cond * eps * ||F||,
    # and ||F|| grows like ||Qinf^-1||^2, so the tolerance is normwise
    scale = max(1.0, np.abs(pred).max(), np.linalg.norm(h.F, 2))
    # defective B splits Jordan blocks at eps^(1/size); compare cluster means
    ctol = CLUSTER_TOL * max(1.0, np.abs(pred).max())
    mismatch = match_multisets(_cluster_means(ev, ctol), _cluster_means(pred, ctol))
    if mismatch > tol * scale:
        raise SpectrumMismatch(f"sigma(F) differs from (+-i/2) sigma(B) by {mismatch:.3e}")
    G, M, calM = conjugation_matrices(stat, model.B)
    # G F = calM G, compared without inverting G
    conj = float(np.linalg.norm(G @ h.F - calM @ G, 2) / max(1e-300, np.linalg.norm(G, 2) * max(1.0, np.linalg.norm(h.F, 2))))
    if conj > 1e-12:
        raise SpectrumMismatch(f"G F G^-1 differs from calM by {conj:.3e}")
    block = block_action_residual(M, calM, np.random.default_rng(seed))
    return HamiltonSpectrum(eigenvalues=ev, predicted=pred, mismatch=mismatch, conjugation_residual=conj, block_residual=block, scale=scale)


def tau0_from_hamilton(h: HamiltonMap) -> float:
    ev = np.linalg.eigvals(h.F)
    ev = _cluster_means(ev, CLUSTER_TOL * max(1.0, np.abs(ev).max()))
    pos = ev.imag[ev.imag > 1e-12]
    return 2.0 * float(pos.min())


def _whitened_cross(model: OUModel, stat: StationaryData) -> np.ndarray:
    """Matrix K with <C x, xi> = v^T K u after whitening the ellipsoid to |u|^2 + |v|^2 = 1."""
    Q = model.Q
    w = np.linalg.eigvalsh(Q)
    if w.min() <= RANK_RTOL * max(w.max(), 1e-300):
        raise NotElliptic("Q is singular")
    Rinv = np.linalg.inv(psd_sqrt(Q))
    C = -0.5 * Q @ stat.Qinf_inv - model.B
    return 4.0 * Rinv @ C @ stat.Qinf @ Rinv


def numerical_range_sector(model: OUModel, stat: StationaryData) -> tuple[float, float]:
    """Extremes (m-, m+) of <(-Q Qinf^-1/2 - B) x, xi> on the energy ellipsoid."""
    K = _whitened_cross(model, stat)
    n = K.shape[0]
    S = np.zeros((2 * n, 2 * n))
    S[:n, n:] = 0.5 * K.T
    S[n:, :n] = 0.5 * K
    ev = np.linalg.eigvalsh(S)
    return float(ev[0]), float(ev[-1])


def sector_sampling_oracle(model: OUModel, stat: StationaryData, samples: int = 100_000, seed: int = 0) -> tuple[float, float]:
    """Independent check of the sector: random sampling of the ellipsoid, then local polishing."""
    Q = model.Q
    R = psd_sqrt(Q)
    C = -0.5 * Q @ stat.Qinf_inv - model.B
    X_map = 2.0 * np.sqrt(2.0) * np.linalg.inv(R @ stat.Qinf_inv)
    Xi_map = np.sqrt(2.0) * np.linalg.inv(R)
    n = model.n

    def value(z):
        z = z / np.linalg.norm(z)
        x = X_map @ z[:n]
        xi = Xi_map @ z[n:]
        energy = 0.5 * xi @ Q @ xi + x @ stat.Qinf_inv @ Q @ stat.Qinf_inv @ x / 8.0
        return (C @ x) @ xi / energy

    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((samples, 2 * n))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    x = Z[:, :n] @ X_map.T
    xi = Z[:, n:] @ Xi_map.T
    vals = np.einsum("ij,ij->i", x @ C.T, xi)
    out = []
    for sign, idx in ((1.0, np.argmin(vals)), (-1.0, np.argmax(vals))):
        res = minimize(lambda z: sign * value(z), Z[idx], method="BFGS", options={"gtol": 1e-12})
        out.append(float(value(res.x)))
    return out[0], out[1]


@dataclass(eq=False)
class Witness:
    x0: np.ndarray
    xi0: np.ndarray
    bracket: float
    t0: float
    lam: float
    mu: float
    zeta0: np.ndarray


def kernel_vector(Q: np.ndarray) -> np.ndarray:
    """Smallest right singular vector of Q, first nonzero entry made positive."""
    _, _, Vh = np.linalg.svd(Q)
    z = Vh[-1].copy()
    nz = np.flatnonzero(np.abs(z) > 1e-12)
    if nz.size and z[nz[0]] < 0:
        z = -z
    return z / np.linalg.norm(z)


def degenerate_witness(model: OUModel, stat: StationaryData, z: complex, grid: int = 64, margin: float = 1e-12) -> Witness:
    """A phase-space point with q(x0, xi0) = z and {Re q, Im q}(x0, xi0) < 0.

    Follows the classical construction for degenerate Q: zeta0 in Ker Q, a small
    time t0 with F0(t0) > 0, F0'(t0) > 0, G(t0) != 0, then explicit scalings.
    """
    z = complex(z)
    if not z.real > 0:
        raise ValueError("z must lie in the open right half-plane")
    Q, B = model.Q, model.B
    s = np.linalg.svd(Q, compute_uv=False)
    if s[-1] > RANK_RTOL * max(s[0], 1e-300):
        raise NotDegenerate("Q is nonsingular")
    zeta = kernel_vector(Q)
    delta = 1.0 / (2.0 * np.linalg.norm(B, 2))
    v0 = B @ stat.Qinf @ zeta
    for t in np.geomspace(delta, delta * 1e-6, grid):
        e = expm(t * B.T) @ zeta
        F0 = float(e @ Q @ e)
        dF0 = float(2.0 * (Q @ B.T @ e) @ e)
        G = float(v0 @ e)
        if F0 > margin and dF0 > margin and abs(G) > margin:
            break
    else:
        raise WitnessSearchFailed("no admissible t0 on the search grid")
    lam = -z.imag / G * np.sqrt(F0 / (2.0 * z.real))
    mu = np.sqrt(2.0 * z.real / F0)
    x0 = lam * stat.Qinf @ zeta
    xi0 = mu * e
    sym = symbol_from_matrices(Q, B, stat.Qinf_inv)
    return Witness(x0=x0, xi0=xi0, bracket=poisson_bracket(sym, x0, xi0), t0=float(t), lam=float(lam), mu=float(mu), zeta0=zeta)
