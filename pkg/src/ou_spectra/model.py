"""Model validation, Kalman rank structure and the invariant measure.

An OU model is the matrix pair (Q, B) of the generator
``P = 1/2 Tr(Q grad^2) + <Bx, grad>``.  Everything here is a pure function of
the two matrices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import expm

from .errors import (
    DimensionMismatch,
    InvariantViolation,
    NoInvariantMeasure,
    NonSquare,
    NotHypoelliptic,
    NotPSD,
    NotSymmetric,
    QuadratureFailure,
    SingularQinf,
)

RANK_RTOL = 1e-10
SYM_TOL = 1e-12
PSD_TOL = 1e-10
QUAD_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class OUModel:
    n: int
    Q: np.ndarray
    B: np.ndarray
    label: str = ""

    def to_dict(self) -> dict:
        return {"n": self.n, "Q": self.Q.tolist(), "B": self.B.tolist(), "label": self.label}


@dataclass(eq=False)
class HypoReport:
    hypoelliptic: bool
    k0: int | None
    dims_Vk: list[int]
    p_seq: list[int]
    fan_basis: np.ndarray
    kalman_rank: int


@dataclass(eq=False)
class StationaryData:
    exists: bool
    Qinf: np.ndarray
    trB: float
    Qinf_inv: np.ndarray
    Qinf_sqrt: np.ndarray
    Qinf_isqrt: np.ndarray = field(repr=False)
    residual: float = 0.0
    quadrature_gap: float | None = None

    @property
    def n(self) -> int:
        return self.Qinf.shape[0]


def psd_sqrt(A: np.ndarray, clamp: float = 1e-12) -> np.ndarray:
    """Symmetric square root of a PSD matrix.

    Eigenvalues within ``clamp`` (relative) of zero are rounding noise and
    become exactly 0; otherwise their square roots would pass as rank.
    """
    A = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(A)
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    if np.any(w < -clamp * scale):
        raise NotPSD(f"eigenvalue {w.min():.3e} below -{clamp:g}")
    w = np.where(w <= clamp * scale, 0.0, w)
    R = (V * np.sqrt(w)) @ V.T
    return 0.5 * (R + R.T)


def numerical_rank(A: np.ndarray, rtol: float = RANK_RTOL) -> int:
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def orth(A: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis of Ran(A) with the relative rank policy."""
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((A.shape[0], 0))
    return U[:, s > rtol * s[0]]


def null_space(A: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis of Ker(A) with the relative rank policy."""
    ncol = A.shape[1]
    if A.shape[0] == 0:
        return np.eye(ncol)
    _, s, Vh = np.linalg.svd(A, full_matrices=True)
    if s.size == 0 or s[0] == 0.0:
        return np.eye(ncol)
    r = int(np.sum(s > rtol * s[0]))
    return Vh[r:].conj().T


def validate_model(Q, B, label: str = "") -> OUModel:
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    for name, M in (("Q", Q), ("B", B)):
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise NonSquare(f"{name} has shape {M.shape}")
    if Q.shape != B.shape:
        raise DimensionMismatch(f"Q is {Q.shape}, B is {B.shape}")
    if Q.shape[0] < 1:
        raise NonSquare("empty matrices")
    if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(B))):
        raise NotSymmetric("non-finite entries")
    asym = float(np.max(np.abs(Q - Q.T)))
    if asym > SYM_TOL:
        raise NotSymmetric(f"max |Q - Q^T| = {asym:.3e}")
    Q = 0.5 * (Q + Q.T)
    wmin = float(np.linalg.eigvalsh(Q).min())
    if wmin < -PSD_TOL:
        raise NotPSD(f"smallest eigenvalue of Q is {wmin:.3e}")
    Q.setflags(write=False)
    B = B.copy()
    B.setflags(write=False)
    return OUModel(n=Q.shape[0], Q=Q, B=B, label=label)


def load_model(path) -> OUModel:
    data = json.loads(Path(path).read_text())
    model = validate_model(data["Q"], data["B"], label=str(data.get("label", "")))
    if "n" in data and int(data["n"]) != model.n:
        raise DimensionMismatch(f"declared n={data['n']} but matrices are {model.n}x{model.n}")
    return model


def save_model(model: OUModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def kalman_matrix(model: OUModel, k: int | None = None) -> np.ndarray:
    """The block matrix [Q^1/2, B Q^1/2, ..., B^k Q^1/2] (k defaults to n-1)."""
    k = model.n - 1 if k is None else k
    R = psd_sqrt(model.Q)
    blocks = [R]
    for _ in range(k):
        blocks.append(model.B @ blocks[-1])
    return np.hstack(blocks)


def kalman_rank(model: OUModel) -> int:
    return numerical_rank(kalman_matrix(model))


def compute_k0(model: OUModel, strict: bool = True) -> HypoReport:
    """Kalman chain V_0 c V_1 c ... with k0, the fan basis and the block check.

    With ``strict`` (the default) a non-hypoelliptic model raises
    NotHypoelliptic; otherwise a report with ``k0=None`` is returned.
    """
    n = model.n
    R = psd_sqrt(model.Q)
    full_rank = kalman_rank(model)
    hypo = full_rank == n
    if not hypo and strict:
        raise NotHypoelliptic(f"Kalman rank {full_rank} < n = {n}")

    basis = np.zeros((n, 0))
    dims: list[int] = []
    blocks = [R]
    k0 = None
    for k in range(n):
        if k > 0:
            blocks.append(model.B @ blocks[-1])
        K = np.hstack(blocks)
        U = orth(K)
        r = U.shape[1]
        if r > basis.shape[1]:
            resid = U - basis @ (basis.T @ U)
            new = orth(resid)[:, : r - basis.shape[1]]
            basis = np.hstack([basis, new])
            # re-orthogonalise once for stability
            basis, _ = np.linalg.qr(basis)
        if dims and r == dims[-1]:
            break
        dims.append(r)
        if r == n:
            k0 = k
            break

    if not dims or dims[0] == 0:
        dims = [0] if not dims else dims
    p_seq = [dims[0]] + [dims[i] - dims[i - 1] for i in range(1, len(dims))]
    if basis.shape[1] < n:
        # complete the fan basis with the orthogonal complement
        comp = null_space(basis.T) if basis.shape[1] else np.eye(n)
        basis = np.hstack([basis, comp])
    report = HypoReport(
        hypoelliptic=hypo,
        k0=k0 if hypo else None,
        dims_Vk=dims,
        p_seq=p_seq,
        fan_basis=basis,
        kalman_rank=full_rank,
    )
    if hypo:
        check_fan_blocks(model, report)
    return report


def check_fan_blocks(model: OUModel, report: HypoReport, tol: float = 1e-10) -> None:
    """Block structure of Q and B in the fan basis.

    The diffusion lives in the leading p0 x p0 block (positive definite) and the
    drift is block upper Hessenberg with full-row-rank subdiagonal blocks.
    """
    T = report.fan_basis
    dims = report.dims_Vk
    C = T.T @ model.B @ T
    A = T.T @ model.Q @ T
    scaleB = max(1.0, np.linalg.norm(model.B, 2))
    scaleQ = max(1.0, np.linalg.norm(model.Q, 2))
    p0 = dims[0]
    off = A.copy()
    off[:p0, :p0] = 0.0
    if np.max(np.abs(off), initial=0.0) > tol * scaleQ:
        raise InvariantViolation("diffusion leaks outside the leading block")
    if np.linalg.eigvalsh(A[:p0, :p0]).min() <= RANK_RTOL * scaleQ:
        raise InvariantViolation("leading diffusion block not positive definite")
    edges = [0] + list(dims)
    nb = len(dims)
    for i in range(nb):
        for j in range(nb):
            blk = C[edges[i] : edges[i + 1], edges[j] : edges[j + 1]]
            if i >= j + 2 and np.max(np.abs(blk), initial=0.0) > tol * scaleB:
                raise InvariantViolation(f"drift block ({i},{j}) does not vanish")
            if i == j + 1 and numerical_rank(blk) != blk.shape[0]:
                raise InvariantViolation(f"subdiagonal block C_{i} is rank deficient")


def drift_is_stable(model: OUModel) -> bool:
    return bool(np.max(np.linalg.eigvals(model.B).real) < -1e-12)


def lyapunov_residual(model: OUModel, X: np.ndarray) -> float:
    return float(np.linalg.norm(model.Q + model.B @ X + X @ model.B.T, "fro"))


def _sym_index(n: int):
    return [(i, j) for i in range(n) for j in range(i, n)]


def solve_lyapunov_sym(B: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Solve Q + B X + X B^T = 0 in the n(n+1)/2 symmetric unknowns."""
    n = B.shape[0]
    idx = _sym_index(n)
    m = len(idx)
    A = np.zeros((m, m))
    rhs = np.array([-Q[i, j] for i, j in idx])
    for col, (k, l) in enumerate(idx):
        E = np.zeros((n, n))
        E[k, l] = E[l, k] = 1.0
        R = B @ E + E @ B.T
        A[:, col] = [R[i, j] for i, j in idx]
    sol = np.linalg.solve(A, rhs)
    X = np.zeros((n, n))
    for v, (i, j) in zip(sol, idx):
        X[i, j] = X[j, i] = v
    return X


def _gram_quadrature(B: np.ndarray, Q: np.ndarray, T: float, tol: float, nodes: int = 16) -> np.ndarray:
    """Composite Gauss-Legendre for int_0^T e^{sB} Q e^{sB^T} ds with panel halving."""
    x, w = leggauss(nodes)
    normB = max(np.linalg.norm(B, 2), 1e-300)
    panels = max(1, int(np.ceil(T * normB)))
    prev = None
    for _ in range(14):
        h = T / panels
        s = 0.5 * h * (x + 1.0)
        G = np.zeros_like(Q)
        for sj, wj in zip(s, w):
            E = expm(sj * B)
            G += (0.5 * h * wj) * (E @ Q @ E.T)
        step = expm(h * B)
        Phi = np.eye(B.shape[0])
        total = np.zeros_like(Q)
        for _k in range(panels):
            total += Phi @ G @ Phi.T
            Phi = Phi @ step
        total = 0.5 * (total + total.T)
        if prev is not None:
            gap = np.linalg.norm(total - prev, "fro")
            if gap <= tol * max(1.0, np.linalg.norm(total, "fro")):
                return total
        prev = total
        panels *= 2
    raise QuadratureFailure(f"no convergence to {tol:g} on [0, {T:g}]")


def qt(model: OUModel, t: float, tol: float = QUAD_TOL) -> np.ndarray:
    """Q_t = int_0^t e^{sB} Q e^{sB^T} ds by composite Gauss-Legendre quadrature."""
    if not t > 0:
        raise ValueError("t must be positive")
    return _gram_quadrature(model.B, model.Q, float(t), tol)


def qt_vanloan(model: OUModel, t: float) -> np.ndarray:
    """Q_t through one block exponential (Van Loan); no cancellation as t -> 0."""
    n = model.n
    H = np.zeros((2 * n, 2 * n))
    H[:n, :n] = model.B
    H[:n, n:] = model.Q
    H[n:, n:] = -model.B.T
    Phi = expm(t * H)
    X = Phi[:n, n:] @ Phi[:n, :n].T
    return 0.5 * (X + X.T)


def truncation_horizon(B: np.ndarray, level: float = 1e-8) -> float:
    T = 1.0
    while np.linalg.norm(expm(T * B), 2) > level:
        T *= 2.0
        if T > 1e8:
            raise QuadratureFailure("e^{TB} does not decay")
    return T


def qinf_quadrature(model: OUModel, tol: float = QUAD_TOL) -> np.ndarray:
    """Q_inf by quadrature on [0, T] with ||e^{TB}|| <= 1e-8 (verification route)."""
    if not drift_is_stable(model):
        raise NoInvariantMeasure("sigma(B) is not in the open left half-plane")
    T = truncation_horizon(model.B)
    return _gram_quadrature(model.B, model.Q, T, tol)


def solve_qinf(model: OUModel, crosscheck: bool = True) -> StationaryData:
    eigs = np.linalg.eigvals(model.B)
    if eigs.real.max() >= -1e-12:
        raise NoInvariantMeasure(f"max Re sigma(B) = {eigs.real.max():.3e}")
    X = solve_lyapunov_sym(model.B, model.Q)
    X = 0.5 * (X + X.T)
    w, V = np.linalg.eigh(X)
    if w.max() <= 0.0 or w.min() <= RANK_RTOL * w.max():
        raise SingularQinf(f"Q_inf eigenvalues in [{w.min():.3e}, {w.max():.3e}]")
    res = lyapunov_residual(model, X)
    normQ = np.linalg.norm(model.Q, "fro")
    if res > 1e-10 * (1.0 + normQ):
        raise InvariantViolation(f"Lyapunov residual {res:.3e}")
    trB = float(np.trace(model.B))
    gap = None
    if crosscheck:
        Xq = qinf_quadrature(model)
        gap = float(np.linalg.norm(Xq - X, "fro"))
        if gap > 1e-8 * max(1.0, np.linalg.norm(X, "fro")):
            raise InvariantViolation(f"quadrature and linear solve differ by {gap:.3e}")
    sq = (V * np.sqrt(w)) @ V.T
    isq = (V / np.sqrt(w)) @ V.T
    inv = (V / w) @ V.T
    return StationaryData(
        exists=True,
        Qinf=X,
        trB=trB,
        Qinf_inv=0.5 * (inv + inv.T),
        Qinf_sqrt=0.5 * (sq + sq.T),
        Qinf_isqrt=0.5 * (isq + isq.T),
        residual=res,
        quadrature_gap=gap,
    )


def log_density(stat: StationaryData, x) -> np.ndarray:
    """log rho(x) for a point (n,) or a batch of points (m, n)."""
    x = np.asarray(x, dtype=float)
    n = stat.n
    _, logdet = np.linalg.slogdet(stat.Qinf)
    quad = np.einsum("...i,ij,...j->...", x, stat.Qinf_inv, x)
    return -0.5 * n * np.log(2 * np.pi) - 0.5 * logdet - 0.5 * quad


def density_rho(stat: StationaryData, x) -> np.ndarray:
    return np.exp(log_density(stat, x))
