"""Hermite-Galerkin discretization of the conjugated operator and its numerical probes.

The basis is {H_beta(w) sqrt(rho)} in whitened coordinates w = Qinf^{-1/2} x,
i.e. the eigenbasis of the oscillator -1/2 Delta_w + 1/8 |w|^2. In one variable
the ladder operator is a = w/2 + d/dw with a e_k = sqrt(k) e_{k-1}, so

    w = a + a^*,     d/dw = (a - a^*) / 2.

Quadratic expressions in (w, d/dw) are formed in a basis one level larger and
then cropped, which makes every assembled matrix the exact Galerkin projection
P_N A P_N of the operator rather than a product of truncated factors.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from math import comb

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eig, expm, schur, svdvals
from scipy.sparse.linalg import LinearOperator, eigsh, splu

from .errors import (
    InvariantViolation,
    NotConverged,
    StepFailure,
    TruncationDominated,
    TruncationTooSmall,
)
from .model import OUModel, StationaryData, solve_qinf
from .spectrum import lattice_for_L

logger = logging.getLogger(__name__)

DENSE_LIMIT = 2000
EXPM_COND_LIMIT = 1e8


def ladder_1d(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Matrices of w and d/dw on levels 0..N-1 (columns are images of e_k)."""
    k = np.arange(1, N, dtype=float)
    s = np.sqrt(k)
    W = np.diag(s, 1) + np.diag(s, -1)
    D = 0.5 * np.diag(s, 1) - 0.5 * np.diag(s, -1)
    return W, D


def _products_1d(N: int) -> dict[str, np.ndarray]:
    """Exact projections of first and second order monomials in (w, d/dw)."""
    W, D = ladder_1d(N + 1)
    out = {
        "I": np.eye(N + 1),
        "W": W,
        "D": D,
        "WW": W @ W,
        "DD": D @ D,
        "WD": W @ D,
        "DW": D @ W,
    }
    return {k: v[:N, :N] for k, v in out.items()}


def _embed(n: int, N: int, factors: dict[int, np.ndarray]) -> sp.csr_matrix:
    """Kronecker product with the given 1-D factor on each listed axis (axis 0 most significant)."""
    out = sp.identity(1, format="csr")
    eye = sp.identity(N, format="csr")
    for j in range(n):
        f = factors.get(j)
        out = sp.kron(out, eye if f is None else sp.csr_matrix(f), format="csr")
    return out


@dataclass(eq=False)
class HermiteBasis:
    n: int
    N: int
    index_map: np.ndarray
    Qinf_sqrt: np.ndarray
    Qinf_isqrt: np.ndarray
    W: list = field(repr=False)
    D: list = field(repr=False)
    _prod: dict = field(repr=False, default_factory=dict)

    @property
    def size(self) -> int:
        return self.N**self.n

    @property
    def levels(self) -> np.ndarray:
        return self.index_map.sum(axis=1)

    def column(self, beta) -> int:
        idx = 0
        for b in beta:
            idx = idx * self.N + int(b)
        return idx

    def interior(self, margin: int) -> np.ndarray:
        """Columns whose every index stays at most N-1-margin."""
        return np.flatnonzero(self.index_map.max(axis=1) <= self.N - 1 - margin)

    def pair(self, k: int, l: int, kind: str) -> sp.csr_matrix:
        """Exact projection of the operator X_k Y_l where kind = 'XY' in {W, D}."""
        key = (k, l, kind)
        if key not in self._prod:
            p = _products_1d(self.N)
            if k == l:
                m = _embed(self.n, self.N, {k: p[kind]})
            else:
                m = _embed(self.n, self.N, {k: p[kind[0]], l: p[kind[1]]})
            self._prod[key] = m
        return self._prod[key]

    def harmonic(self) -> sp.csr_matrix:
        """Matrix of -1/2 Delta_w + 1/8 |w|^2."""
        H = sp.csr_matrix((self.size, self.size))
        for k in range(self.n):
            H = H - 0.5 * self.pair(k, k, "DD") + 0.125 * self.pair(k, k, "WW")
        return H

    def basis_values(self, x) -> np.ndarray:
        """Values of the basis functions H_beta sqrt(rho) at points x (shape (m, n))."""
        x = np.atleast_2d(np.asarray(x, float))
        w = x @ self.Qinf_isqrt.T
        m = w.shape[0]
        logdet = np.log(np.linalg.det(self.Qinf_sqrt))
        # normalized Hermite functions of the oscillator, one axis at a time
        vals1d = np.zeros((self.n, self.N, m))
        for j in range(self.n):
            y = w[:, j]
            h = np.zeros((self.N, m))
            h[0] = (2 * np.pi) ** -0.25 * np.exp(-0.25 * y * y)
            if self.N > 1:
                h[1] = y * h[0]
            for k in range(1, self.N - 1):
                h[k + 1] = (y * h[k] - np.sqrt(k) * h[k - 1]) / np.sqrt(k + 1)
            vals1d[j] = h
        out = np.ones((m, self.size))
        for j in range(self.n):
            out *= vals1d[j][self.index_map[:, j]].T
        return out * np.exp(-0.5 * logdet)


def build_basis(stat: StationaryData, N: int) -> HermiteBasis:
    if N < 2:
        raise TruncationTooSmall(f"N = {N} < 2")
    n = stat.n
    index_map = np.array(list(product(range(N), repeat=n)), dtype=int).reshape(-1, n)
    p = _products_1d(N)
    W = [_embed(n, N, {j: p["W"]}) for j in range(n)]
    D = [_embed(n, N, {j: p["D"]}) for j in range(n)]
    return HermiteBasis(
        n=n,
        N=N,
        index_map=index_map,
        Qinf_sqrt=stat.Qinf_sqrt,
        Qinf_isqrt=stat.Qinf_isqrt,
        W=W,
        D=D,
    )


def quadratic_operator(basis: HermiteBasis, Qt: np.ndarray, Vt: np.ndarray, At: np.ndarray, order: str = "WD") -> sp.csr_matrix:
    """Galerkin matrix of -sum Qt_kl d_k d_l + sum Vt_kl w_k w_l - sum At_kl w_l d_k.

    With ``order='DW'`` the drift term is d_k w_l instead, which is the form
    appearing in adjoints.
    """
    n = basis.n
    out = sp.csr_matrix((basis.size, basis.size))
    for k in range(n):
        for l in range(n):
            if Qt[k, l]:
                out = out - Qt[k, l] * basis.pair(k, l, "DD")
            if Vt[k, l]:
                out = out + Vt[k, l] * basis.pair(k, l, "WW")
            if At[k, l]:
                if order == "WD":
                    out = out - At[k, l] * basis.pair(l, k, "WD")
                else:
                    out = out - At[k, l] * basis.pair(k, l, "DW")
    return out.tocsr()


@dataclass(eq=False)
class GalerkinOperator:
    L: sp.csr_matrix
    Ladj: sp.csr_matrix
    basis: HermiteBasis
    model: OUModel
    stat: StationaryData
    _dense: np.ndarray | None = field(default=None, repr=False)
    _blocks: list | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.basis.size

    @property
    def N(self) -> int:
        return self.basis.N

    def dense(self) -> np.ndarray:
        if self._dense is None:
            self._dense = self.L.toarray()
            self._dense.setflags(write=False)
        return self._dense

    def degree_blocks(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(indices, dense block) for each total degree |beta|.

        L commutes with the number operator, so it is block diagonal by total
        degree and every spectral quantity splits over these blocks.
        """
        if self._blocks is None:
            lv = self.basis.levels
            out = []
            for d in range(int(lv.max()) + 1):
                idx = np.flatnonzero(lv == d)
                blk = self.L[idx][:, idx]
                blk = blk.toarray() if idx.size <= DENSE_LIMIT else blk.tocsr()
                out.append((idx, blk))
            self._blocks = out
        return self._blocks

    def rebuild(self, N: int) -> "GalerkinOperator":
        return assemble_L(self.model, self.stat, build_basis(self.stat, N))


def _whitened(model: OUModel, stat: StationaryData):
    S, Si = stat.Qinf_sqrt, stat.Qinf_isqrt
    Qt = Si @ model.Q @ Si
    A = 0.5 * model.Q @ stat.Qinf_inv + model.B
    return 0.5 * (Qt + Qt.T), Si @ A @ S


def assemble_L(model: OUModel, stat: StationaryData, basis: HermiteBasis, check: bool = True) -> GalerkinOperator:
    """Matrix of 1/2|Q^1/2 D_x|^2 + 1/8|Q^1/2 Qinf^-1 x|^2 - <(Q Qinf^-1/2 + B) x, grad>."""
    Qt, At = _whitened(model, stat)
    L = quadratic_operator(basis, 0.5 * Qt, 0.125 * Qt, At, order="WD")
    # the adjoint is built separately: -(w_l d_k)^* = d_k w_l
    Ladj = quadratic_operator(basis, 0.5 * Qt, 0.125 * Qt, -At, order="DW")
    op = GalerkinOperator(L=L.tocsr(), Ladj=Ladj, basis=basis, model=model, stat=stat)
    if check:
        check_galerkin(op)
    return op


def check_galerkin(op: GalerkinOperator, tol: float = 1e-12) -> dict[str, float]:
    """Adjoint-transpose, ground-state and accretivity identities."""
    L, Ladj = op.L, op.Ladj
    scale = max(1.0, abs(L).max())
    adj = abs(Ladj - L.T).max() if (Ladj - L.T).nnz else 0.0
    if adj > tol * scale:
        raise InvariantViolation(f"Ladj differs from L^T by {adj:.3e}")
    e0 = np.zeros(op.size)
    e0[0] = 1.0
    g = L @ e0
    g[0] -= -0.5 * op.stat.trB
    ground = float(np.abs(g).max())
    if ground > tol * scale:
        raise InvariantViolation(f"L e0 != -Tr(B)/2 e0, residual {ground:.3e}")
    Hs = 0.5 * (L + L.T)
    if op.size <= DENSE_LIMIT:
        lo = float(np.linalg.eigvalsh(Hs.toarray())[0])
    else:
        # eigenvalues of Hs are highly degenerate when Q is low rank, which stalls
        # ARPACK; sample Rayleigh quotients instead
        V = np.random.default_rng(0).standard_normal((op.size, 100))
        V /= np.linalg.norm(V, axis=0)
        lo = float(np.min(np.einsum("ij,ij->j", V, Hs @ V)))
    if lo < -1e-10 * scale:
        raise InvariantViolation(f"symmetric part has eigenvalue {lo:.3e}")
    C = L.tocoo()
    lv = op.basis.levels
    off = C.data[lv[C.row] != lv[C.col]]
    degree = float(np.abs(off).max()) if off.size else 0.0
    if degree > tol * scale:
        raise InvariantViolation(f"L couples different total degrees, entry {degree:.3e}")
    return {"adjoint": float(adj), "ground": ground, "accretive_min": lo, "degree": degree}


def commutator_galerkin(op: GalerkinOperator, commutator_coeff: np.ndarray) -> sp.csr_matrix:
    """Galerkin matrix of the quantized real symbol <Ws xi, xi> + 1/4 <Ws Qinf^-1 x, Qinf^-1 x>.

    ``commutator_coeff`` is the 2n x 2n coefficient matrix of that symbol.
    """
    n = op.basis.n
    Si = op.stat.Qinf_isqrt
    Ws = np.real(commutator_coeff[n:, n:])
    Mt = Si @ Ws @ Si
    return quadratic_operator(op.basis, Mt, 0.25 * Mt, np.zeros((n, n)))


def interior_commutator_gap(op: GalerkinOperator, commutator_coeff: np.ndarray, margin: int = 2) -> float:
    """Max entry of [L, L^T] - C on rows and columns supported at levels <= N-1-margin.

    The quadratic operator L moves levels by at most two, so the products
    L L^T and L^T L are exact there.
    """
    L = op.L
    comm = (L @ L.T - L.T @ L).tocsr()
    C = commutator_galerkin(op, commutator_coeff)
    idx = op.basis.interior(margin)
    diff = (comm - C)[idx][:, idx]
    return float(abs(diff).max()) if diff.nnz else 0.0


@dataclass(eq=False)
class LowLying:
    eigenvalues: np.ndarray
    by_N: dict
    cauchy: list
    predicted: np.ndarray
    lattice_error: float


def _lowest(L: np.ndarray, m: int) -> np.ndarray:
    ev = np.linalg.eigvals(L)
    ev = ev[np.lexsort((ev.imag, np.round(ev.real, 8)))]
    return ev[:m]


def _match_error(a: np.ndarray, candidates: np.ndarray) -> float:
    from scipy.optimize import linear_sum_assignment

    D = np.abs(a[:, None] - candidates[None, :])
    r, c = linear_sum_assignment(D)
    return float(D[r, c].max()) if len(r) else 0.0


def eigs_lowlying(op: GalerkinOperator, m: int, Nseq: list[int] | None = None, tol: float = 1e-4) -> LowLying:
    """The m eigenvalues of lowest real part along a sequence of truncations."""
    Nseq = list(Nseq) if Nseq else [op.N]
    by_N = {}
    for N in Nseq:
        o = op if N == op.N else op.rebuild(N)
        by_N[N] = _lowest(o.dense(), m)
    cauchy = []
    for a, b in zip(Nseq, Nseq[1:]):
        d = _match_error(by_N[a], by_N[b])
        cauchy.append(d)
        if d > tol:
            raise NotConverged(f"eigenvalues moved by {d:.3e} between N={a} and N={b}")
    final = by_N[Nseq[-1]]
    re_max = final.real.max()
    # enumerate far enough to include every lattice point that ties with the last one
    lat = lattice_for_L(np.linalg.eigvals(op.model.B), op.stat.trB, re_max + 0.5 * op.stat.trB + 1.0)
    return LowLying(
        eigenvalues=final,
        by_N=by_N,
        cauchy=cauchy,
        predicted=lat.points,
        lattice_error=_match_error(final, np.repeat(lat.points, lat.rep_counts)),
    )


# smallest singular values -------------------------------------------------


def sigma_min_dense(A: np.ndarray, z: complex) -> float:
    M = A - z * np.eye(A.shape[0])
    return float(svdvals(M, check_finite=False)[-1])


def sigma_min_sparse(L: sp.spmatrix, z: complex, tol: float = 1e-10, maxiter: int = 500) -> float:
    """Smallest singular value of L - z via Lanczos on ((L-z)^* (L-z))^-1 with one LU."""
    n = L.shape[0]
    M = (L - z * sp.identity(n, format="csr")).tocsc().astype(complex)
    lu = splu(M)

    def apply(v):
        y = lu.solve(v.astype(complex), trans="H")
        return lu.solve(y)

    op = LinearOperator((n, n), matvec=apply, dtype=complex)
    v0 = np.ones(n, complex) / np.sqrt(n)
    lam = eigsh(op, k=1, which="LM", tol=tol, maxiter=maxiter, v0=v0, return_eigenvectors=False)[0]
    return float(1.0 / np.sqrt(abs(lam)))


def sigma_min(op: GalerkinOperator, z: complex) -> float:
    """Smallest singular value of L_N - z, taken block by block over total degree."""
    out = np.inf
    for _, blk in op.degree_blocks():
        if isinstance(blk, np.ndarray):
            s = sigma_min_dense(blk, z)
        else:
            s = sigma_min_sparse(blk, z)
        out = min(out, s)
    return float(out)


_WORKER_OP: GalerkinOperator | None = None


def _worker_init(op: GalerkinOperator) -> None:
    global _WORKER_OP
    from threadpoolctl import threadpool_limits

    threadpool_limits(1)
    _WORKER_OP = op


def _worker_chunk(zs: np.ndarray) -> np.ndarray:
    return np.array([sigma_min(_WORKER_OP, z) for z in zs])


def grid_points(re0: float, re1: float, im0: float, im1: float, nx: int, ny: int) -> np.ndarray:
    """Row-major grid: imaginary part outer, real part inner."""
    xs = np.linspace(re0, re1, nx)
    ys = np.linspace(im0, im1, ny)
    return (xs[None, :] + 1j * ys[:, None]).ravel()


@dataclass(eq=False)
class ScanResult:
    z: np.ndarray
    sigma_min: np.ndarray
    meta: dict


def pseudospectrum_scan(op: GalerkinOperator, z, jobs: int = 1, chunks: int | None = None) -> ScanResult:
    """sigma_min(L - z) at every point, distributed over ``jobs`` worker processes.

    Each value depends only on its own z, so the output is independent of the
    worker count.
    """
    z = np.asarray(z, complex).ravel()
    t0 = time.perf_counter()
    op.degree_blocks()
    if jobs <= 1 or z.size < 2:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(1):
            vals = np.array([sigma_min(op, zz) for zz in z])
    else:
        nchunks = chunks or min(z.size, 4 * jobs)
        parts = np.array_split(z, nchunks)
        with ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init, initargs=(op,)) as ex:
            vals = np.concatenate(list(ex.map(_worker_chunk, parts)))
    meta = {
        "model": op.model.label,
        "N": op.N,
        "size": op.size,
        "points": int(z.size),
        "jobs": int(jobs),
        "wall_time": time.perf_counter() - t0,
    }
    return ScanResult(z=z, sigma_min=vals, meta=meta)


def ray_probe(op: GalerkinOperator, z0: complex, direction: complex, ts) -> np.ndarray:
    """Resolvent norms 1/sigma_min(L - z) along z0 + t * direction."""
    ts = np.asarray(ts, float)
    return np.array([1.0 / sigma_min(op, z0 + t * direction) for t in ts])


@dataclass(eq=False)
class AxisFit:
    slope: float
    residual: float
    nus: np.ndarray
    norms: np.ndarray
    N: int
    slope_check: float | None
    N_check: int | None


def _fit_loglog(nus: np.ndarray, norms: np.ndarray) -> tuple[float, float]:
    X = np.column_stack([np.log(nus), np.ones_like(nus)])
    coef, res, *_ = np.linalg.lstsq(X, np.log(norms), rcond=None)
    resid = float(np.sqrt(res[0] / len(nus))) if res.size else 0.0
    return float(coef[0]), resid


def imaginary_axis_exponent(
    op: GalerkinOperator,
    k0: int,
    nu_range: tuple[float, float] = (8.0, 64.0),
    points: int = 8,
    check_N: int | None = None,
    gate: float = 0.05,
) -> AxisFit:
    """Log-log slope of ||(L - i nu)^-1|| over nu, with a truncation-refinement gate.

    ``check_N`` defaults to 2N. The fit is rejected with TruncationDominated
    when the refined truncation moves the slope by more than ``gate``.
    """
    nus = np.geomspace(nu_range[0], nu_range[1], points)
    norms = np.array([1.0 / sigma_min(op, 1j * nu) for nu in nus])
    slope, resid = _fit_loglog(nus, norms)
    slope_check = None
    N2 = check_N if check_N is not None else 2 * op.N
    if N2:
        op2 = op.rebuild(N2)
        norms2 = np.array([1.0 / sigma_min(op2, 1j * nu) for nu in nus])
        slope_check, _ = _fit_loglog(nus, norms2)
        if abs(slope_check - slope) > gate:
            raise TruncationDominated(f"slope {slope:.4f} at N={op.N} vs {slope_check:.4f} at N={N2}")
    logger.info("axis fit k0=%d slope=%.4f expected=%.4f", k0, slope, -1.0 / (2 * k0 + 1))
    return AxisFit(slope=slope, residual=resid, nus=nus, norms=norms, N=op.N, slope_check=slope_check, N_check=N2 or None)


# degree blocks without a box ---------------------------------------------
#
# With G = Qt/2 + At and c = Tr(Qt)/4 the operator reads
#
#     L = sum_kl G_kl a^*_k a_l + c,
#
# because At is antisymmetric (Lyapunov equation). It preserves the total
# degree, so the space of degree-d Hermite functions is invariant and the
# truncation {|beta| <= D} is exact block by block. A unitary change U of
# the one-particle basis acts unitarily on each block, so the complex Schur
# form G = U T U^* gives triangular blocks with the same singular values.


def one_particle_generator(model: OUModel, stat: StationaryData) -> tuple[np.ndarray, float]:
    Qt, At = _whitened(model, stat)
    return 0.5 * Qt + At, 0.25 * float(np.trace(Qt))


def simplex_indices(n: int, d: int) -> np.ndarray:
    """All multi-indices of length n and total degree d, lexicographically descending."""
    if n == 1:
        return np.array([[d]], dtype=np.int64)
    parts = []
    for b0 in range(d, -1, -1):
        sub = simplex_indices(n - 1, d - b0)
        parts.append(np.column_stack([np.full(len(sub), b0, dtype=np.int64), sub]))
    return np.vstack(parts)


def number_conserving_block(G: np.ndarray, c: float, d: int) -> sp.csr_matrix:
    """Matrix of sum G_kl a^*_k a_l + c on the degree-d Hermite functions."""
    n = G.shape[0]
    idx = simplex_indices(n, d)
    size = len(idx)
    radix = np.int64(d + 1) ** np.arange(n - 1, -1, -1, dtype=np.int64)
    keys = idx @ radix
    order = np.argsort(keys)
    skeys = keys[order]
    rows, cols, vals = [np.arange(size)], [np.arange(size)], [np.full(size, c, dtype=G.dtype)]
    for l in range(n):
        src = np.flatnonzero(idx[:, l] > 0)
        for k in range(n):
            if G[k, l] == 0:
                continue
            b = idx[src].copy()
            v = np.sqrt(b[:, l].astype(float))
            b[:, l] -= 1
            b[:, k] += 1
            v = v * np.sqrt(b[:, k].astype(float))
            rows.append(order[np.searchsorted(skeys, b @ radix)])
            cols.append(src)
            vals.append(G[k, l] * v)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    )


def block_size(n: int, d: int) -> int:
    return comb(d + n - 1, n - 1)


@dataclass(eq=False)
class ChaosOperator:
    """L on the total-degree truncation, stored through its one-particle generator."""

    model: OUModel
    stat: StationaryData
    G: np.ndarray
    c: float
    T: np.ndarray
    U: np.ndarray

    @property
    def n(self) -> int:
        return self.G.shape[0]

    def block(self, d: int, schur: bool = True) -> sp.csr_matrix:
        return number_conserving_block(self.T if schur else self.G, self.c, d)

    def sigma_min_block(self, d: int, z: complex, blk: sp.spmatrix | None = None) -> float:
        blk = self.block(d) if blk is None else blk
        if blk.shape[0] <= 64:
            return sigma_min_dense(blk.toarray(), z)
        return sigma_min_triangular(blk, z)

    def sigma_min(self, z: complex, D: int) -> float:
        """Exact sigma_min of L - z on {|beta| <= D}."""
        return float(min(self.sigma_min_block(d, z) for d in range(D + 1)))


def chaos_operator(model: OUModel, stat: StationaryData | None = None) -> ChaosOperator:
    stat = stat or solve_qinf(model)
    G, c = one_particle_generator(model, stat)
    T, U = schur(G.astype(complex), output="complex")
    return ChaosOperator(model=model, stat=stat, G=G, c=c, T=T, U=U)


def sigma_min_triangular(A: sp.spmatrix, z: complex, tol: float = 1e-10, maxiter: int = 500) -> float:
    """sigma_min of an upper triangular sparse A - z; the LU is the matrix itself."""
    n = A.shape[0]
    M = (A - z * sp.identity(n, format="csr")).tocsc().astype(complex)
    lu = splu(M, permc_spec="NATURAL", diag_pivot_thresh=0.0, options={"SymmetricMode": True})

    def apply(v):
        return lu.solve(lu.solve(v.astype(complex), trans="H"))

    op = LinearOperator((n, n), matvec=apply, dtype=complex)
    v0 = np.ones(n, complex) / np.sqrt(n)
    lam = eigsh(op, k=1, which="LM", tol=tol, maxiter=maxiter, v0=v0, return_eigenvectors=False)[0]
    return float(1.0 / np.sqrt(abs(lam)))


def degree_grid(D: int, dense: int = 32, ratio: float = 2 ** 0.125) -> np.ndarray:
    """All degrees up to ``dense``, then a geometric grid up to and including D."""
    lo = np.arange(min(D, dense) + 1)
    if D <= dense:
        return lo
    m = int(np.ceil(np.log(D / dense) / np.log(ratio)))
    hi = np.unique(np.round(dense * ratio ** np.arange(1, m + 1)).astype(int))
    return np.unique(np.concatenate([lo, hi[hi < D], [D]]))


@dataclass(eq=False)
class ChaosAxisFit:
    slope: float
    residual: float
    nus: np.ndarray
    norms: np.ndarray
    argmax_degree: np.ndarray
    D: int
    slope_check: float
    D_check: int
    degrees: np.ndarray
    profile: np.ndarray = field(repr=False)


def chaos_axis_exponent(
    cop: ChaosOperator,
    k0: int,
    nu_range: tuple[float, float] = (8.0, 64.0),
    points: int = 8,
    D: int = 256,
    gate: float = 0.05,
    ratio: float = 2 ** 0.125,
) -> ChaosAxisFit:
    """Log-log slope of ||(L - i nu)^-1|| on the degree truncation |beta| <= D.

    Blocks are sampled on ``degree_grid``; the profile over the degree is
    smooth with a flat maximum, so the sampled maximum is accurate to well
    below the fit residual. The truncation is refined to 2D and the fit is
    rejected with TruncationDominated if the slope moves by more than ``gate``.
    Each block is built once and reused for every nu.
    """
    nus = np.geomspace(nu_range[0], nu_range[1], points)
    degrees = degree_grid(2 * D, ratio=ratio)
    degrees = np.unique(np.concatenate([degrees, [D]]))
    prof = np.empty((degrees.size, nus.size))
    t0 = time.perf_counter()
    for i, d in enumerate(degrees):
        blk = cop.block(int(d))
        for j, nu in enumerate(nus):
            prof[i, j] = 1.0 / cop.sigma_min_block(int(d), 1j * nu, blk)
    logger.debug("chaos profile over %d degrees in %.1fs", degrees.size, time.perf_counter() - t0)
    inner = degrees <= D
    norms = prof[inner].max(axis=0)
    arg = degrees[inner][prof[inner].argmax(axis=0)]
    norms2 = prof.max(axis=0)
    slope, resid = _fit_loglog(nus, norms)
    slope2, _ = _fit_loglog(nus, norms2)
    fit = ChaosAxisFit(
        slope=slope,
        residual=resid,
        nus=nus,
        norms=norms,
        argmax_degree=arg,
        D=D,
        slope_check=slope2,
        D_check=2 * D,
        degrees=degrees,
        profile=prof,
    )
    if abs(slope2 - slope) > gate:
        err = TruncationDominated(f"slope {slope:.4f} at D={D} vs {slope2:.4f} at D={2 * D}")
        err.fit = fit
        raise err
    logger.info("chaos axis fit k0=%d slope=%.4f expected=%.4f", k0, slope, -1.0 / (2 * k0 + 1))
    return fit


# Sobolev scale and smoothing ---------------------------------------------


def sobolev_weights(basis: HermiteBasis, s: float) -> np.ndarray:
    return (1.0 + 0.5 * basis.levels) ** s


def sobolev_norm(basis: HermiteBasis, coeffs, s: float) -> float:
    c = np.asarray(coeffs)
    return float(np.sqrt(np.sum(sobolev_weights(basis, s) * np.abs(c) ** 2)))


def subelliptic_ratio(op: GalerkinOperator, k0: int, samples) -> tuple[float, np.ndarray]:
    """max ||v||_{H^s} / (||L v|| + ||v||) with s = 2/(2 k0 + 1)."""
    s = 2.0 / (2 * k0 + 1)
    best, arg = -np.inf, None
    for v in samples:
        v = np.asarray(v)
        r = sobolev_norm(op.basis, v, s) / (np.linalg.norm(op.L @ v) + np.linalg.norm(v))
        if r > best:
            best, arg = r, v
    return float(best), arg


def random_interior_samples(basis: HermiteBasis, count: int, rng: np.random.Generator, margin: int = 3) -> list[np.ndarray]:
    """Random coefficient vectors supported on levels <= N-1-margin."""
    idx = basis.interior(margin)
    out = []
    for _ in range(count):
        v = np.zeros(basis.size)
        decay = rng.uniform(0.0, 2.0)
        v[idx] = rng.standard_normal(idx.size) / (1.0 + basis.levels[idx]) ** decay
        out.append(v / np.linalg.norm(v))
    return out


@dataclass(eq=False)
class Propagator:
    """exp(-t A) for a fixed matrix, by eigendecomposition when well conditioned."""

    A: np.ndarray
    method: str = ""
    _V: np.ndarray | None = field(default=None, repr=False)
    _Vi: np.ndarray | None = field(default=None, repr=False)
    _lam: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        lam, V = eig(self.A)
        cond = np.linalg.cond(V)
        if np.isfinite(cond) and cond <= EXPM_COND_LIMIT:
            self.method = "eig"
            self._lam, self._V, self._Vi = lam, V, np.linalg.inv(V)
        else:
            self.method = "expm"

    def apply(self, t: float, c: np.ndarray) -> np.ndarray:
        if t == 0:
            return np.array(c, copy=True)
        if self.method == "eig":
            out = self._V @ (np.exp(-t * self._lam) * (self._Vi @ c))
            return out.real if np.isrealobj(self.A) and np.isrealobj(c) else out
        return expm(-t * self.A) @ c

    def trajectory(self, t_grid, c0: np.ndarray) -> np.ndarray:
        """exp(-t A) c0 on an increasing grid; the expm path steps with cached increments."""
        t_grid = np.asarray(t_grid, float)
        if self.method == "eig":
            return np.array([self.apply(t, c0) for t in t_grid])
        steps: dict[float, np.ndarray] = {}
        out = []
        c, prev = np.array(c0, copy=True), 0.0
        for t in t_grid:
            h = round(t - prev, 12)
            if h > 0:
                if h not in steps:
                    steps[h] = expm(-h * self.A)
                c = steps[h] @ c
            out.append(c)
            prev = t
        return np.array(out)


@dataclass(eq=False)
class BlockPropagator:
    """exp(-t (L + shift)) or its transpose, one total-degree block at a time."""

    op: GalerkinOperator
    shift: float = 0.0
    transpose: bool = False
    _parts: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        for idx, blk in self.op.degree_blocks():
            A = blk.toarray() if sp.issparse(blk) else np.array(blk)
            A = A.T if self.transpose else A
            self._parts.append((idx, Propagator(A + self.shift * np.eye(idx.size))))

    @property
    def method(self) -> str:
        kinds = {p.method for _, p in self._parts}
        return "+".join(sorted(kinds))

    def apply(self, t: float, c: np.ndarray) -> np.ndarray:
        out = np.zeros_like(c, dtype=np.result_type(c, float))
        for idx, prop in self._parts:
            out[idx] = prop.apply(t, c[idx])
        return out

    def trajectory(self, t_grid, c0: np.ndarray) -> np.ndarray:
        t_grid = np.asarray(t_grid, float)
        out = np.zeros((t_grid.size, c0.size), dtype=np.result_type(c0, float))
        for idx, prop in self._parts:
            out[:, idx] = prop.trajectory(t_grid, c0[idx])
        return out


def evolve_coeffs(op: GalerkinOperator, c0, t_grid, propagator: Propagator | BlockPropagator | None = None) -> np.ndarray:
    """Trajectory c(t) = exp(-t L) c0; the norm must not grow (L is accretive)."""
    t_grid = np.asarray(t_grid, float)
    if np.any(np.diff(t_grid) < 0) or (t_grid.size and t_grid[0] < 0):
        raise ValueError("t_grid must be increasing and non-negative")
    prop = propagator or BlockPropagator(op)
    c0 = np.asarray(c0, float)
    traj = prop.trajectory(t_grid, c0)
    norms = np.concatenate([[np.linalg.norm(c0)], np.linalg.norm(traj, axis=1)])
    if np.max(np.diff(norms), initial=0.0) > 1e-8 * max(norms[0], 1e-300):
        raise StepFailure("coefficient norm grew along exp(-tL)")
    return traj


def tail_energy(basis: HermiteBasis, c: np.ndarray, power: float = 4.0) -> float:
    """sum over |beta| > N/2 of (1 + |beta|/2)^power |c_beta|^2."""
    lv = basis.levels
    mask = lv > basis.N / 2
    return float(np.sum((1.0 + 0.5 * lv[mask]) ** power * np.abs(c[mask]) ** 2))


def galerkin(model: OUModel, N: int, stat: StationaryData | None = None) -> GalerkinOperator:
    stat = stat or solve_qinf(model)
    return assemble_L(model, stat, build_basis(stat, N))


def default_jobs() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)
