"""End-to-end acceptance checks, one function per criterion.

Each check returns a CriterionResult carrying the measured quantities, so a
failure reports what was observed rather than just a flag.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .canonical import (
    canonical_models,
    m_chain3,
    m_ellnn,
    m_kramers,
    m_ou1,
    m_self,
    random_mixed_model,
    random_stable_model,
)
from .errors import ChainMismatch, SingularQinf, SpectrumMismatch, TruncationDominated
from .hermite import (
    chaos_axis_exponent,
    chaos_operator,
    eigs_lowlying,
    galerkin,
    grid_points,
    interior_commutator_gap,
    pseudospectrum_scan,
    sigma_min,
)
from .mehler import (
    decay_curve,
    entropy_fit,
    fokker_planck_evolve,
    gaussian_datum,
    gaussian_density,
    hermite_polynomials,
    hermite_semigroup,
    mehler_apply,
)
from .model import compute_k0, kalman_rank, numerical_rank, qt, solve_qinf
from .report import csv_text
from .spectrum import lattice_for_L
from .symbol import (
    block_action_residual,
    build_symbol,
    conjugation_matrices,
    degenerate_witness,
    hamilton_map,
    hamilton_spectrum,
    normality_test,
    numerical_range_sector,
    singular_space,
    symbol_from_matrices,
)

logger = logging.getLogger(__name__)

RANDOM_MODELS = 50


@dataclass(eq=False)
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float
    data: dict = field(default_factory=dict, repr=False)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] criterion {self.number:2d} {self.title}: {self.detail} ({self.seconds:.1f} s)"


def _stable_models(seed: int):
    rng = np.random.default_rng(seed)
    return canonical_models() + [random_stable_model(rng) for _ in range(RANDOM_MODELS)]


def _mixed_models(seed: int):
    rng = np.random.default_rng(seed + 1)
    return [random_mixed_model(rng) for _ in range(RANDOM_MODELS)]


def criterion_1(seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    worst_res, worst_gap = 0.0, 0.0
    for m in _stable_models(seed):
        st = solve_qinf(m, crosscheck=True)
        worst_res = max(worst_res, st.residual)
        worst_gap = max(worst_gap, st.quadrature_gap)
    dt = time.perf_counter() - t0
    ok = worst_res <= 1e-10 and worst_gap <= 1e-8 and dt < 5.0
    return CriterionResult(
        1,
        "Lyapunov and invariant measure",
        ok,
        f"max residual {worst_res:.2e} (<=1e-10), max quadrature gap {worst_gap:.2e} (<=1e-8), runtime < 5 s",
        dt,
        {"residual": worst_res, "gap": worst_gap},
    )


def _symbol_for(m):
    """Symbol with Qinf^-1 when the measure exists, else the identity weight.

    The xi-part of the singular space does not involve Qinf^-1, so the
    verdict dim S = 0 is unaffected by the substitute weight.
    """
    try:
        st = solve_qinf(m, crosscheck=False)
        Qi = st.Qinf_inv
    except SingularQinf:
        Qi = np.eye(m.n)
    return symbol_from_matrices(m.Q, m.B, Qi)


def criterion_2(seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    models = _stable_models(seed) + _mixed_models(seed)
    bad = []
    non_hypo = 0
    for m in models:
        kal = kalman_rank(m) == m.n
        qt1 = numerical_rank(qt(m, 1.0)) == m.n
        try:
            sym = _symbol_for(m)
            ss = singular_space(hamilton_map(sym), sym)
            s0 = ss.dim == 0
        except ChainMismatch:
            bad.append(m.label)
            continue
        non_hypo += not kal
        if not (kal == qt1 == s0):
            bad.append(m.label)
    dt = time.perf_counter() - t0
    return CriterionResult(
        2,
        "hypoellipticity equivalences",
        not bad,
        f"{len(bad)} disagreements over {len(models)} models ({non_hypo} non-hypoelliptic)",
        dt,
        {"disagreements": bad},
    )


def criterion_3(seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    bad, count = [], 0
    for m in _stable_models(seed):
        rep = compute_k0(m, strict=False)
        if not rep.hypoelliptic:
            continue
        count += 1
        st = solve_qinf(m, crosscheck=False)
        sym = build_symbol(m, st)
        ss = singular_space(hamilton_map(sym), sym)
        if ss.chain_index != rep.k0:
            bad.append((m.label, rep.k0, ss.chain_index))
    dt = time.perf_counter() - t0
    return CriterionResult(3, "k0 equals Hamilton chain index", not bad, f"{len(bad)} mismatches over {count} hypoelliptic models", dt, {"mismatches": bad})


def criterion_4(seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    worst_abs, worst_rel, worst_block = 0.0, 0.0, 0.0
    failures = []
    for m in _stable_models(seed):
        st = solve_qinf(m, crosscheck=False)
        h = hamilton_map(build_symbol(m, st))
        try:
            hs = hamilton_spectrum(h, m, st, tol=1e-8, seed=seed)
            worst_abs = max(worst_abs, hs.mismatch)
            worst_rel = max(worst_rel, hs.mismatch / hs.scale)
        except SpectrumMismatch as exc:
            failures.append((m.label, str(exc)))
        _, M, calM = conjugation_matrices(st, m.B)
        worst_block = max(worst_block, block_action_residual(M, calM, np.random.default_rng(seed), trials=100))
    dt = time.perf_counter() - t0
    ok = not failures and worst_rel <= 1e-8 and worst_block <= 1e-12
    return CriterionResult(
        4,
        "Hamilton spectrum",
        ok,
        f"max multiset mismatch {worst_rel:.2e} relative to max(1, |F|) (<=1e-8; absolute {worst_abs:.2e}), "
        f"block-action residual {worst_block:.2e} (<=1e-12)",
        dt,
        {"failures": failures},
    )


def criterion_5(seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    ground = 0.0
    for m in canonical_models():
        op = galerkin(m, 32 if m.n <= 2 else 12)
        e0 = np.zeros(op.size)
        e0[0] = 1.0
        r = op.L @ e0
        r[0] += 0.5 * op.stat.trB
        ground = max(ground, float(np.abs(r).max()))
    ou = eigs_lowlying(galerkin(m_ou1(), 32), 5)
    ou_err = float(np.abs(np.sort(ou.eigenvalues.real) - np.arange(5) - 0.5).max() + np.abs(ou.eigenvalues.imag).max())
    kr = eigs_lowlying(galerkin(m_kramers(), 32), 5)
    dt = time.perf_counter() - t0
    ok = ground <= 1e-12 and ou_err <= 1e-6 and kr.lattice_error <= 1e-6 and dt < 60
    return CriterionResult(
        5,
        "ground state and low-lying spectrum",
        ok,
        f"|L e0 + TrB/2 e0| = {ground:.1e}, OU1 error {ou_err:.1e}, Kramers N=32 lattice error {kr.lattice_error:.1e} (<=1e-6)",
        dt,
        {"kramers": kr.eigenvalues},
    )


def criterion_6(seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    models = canonical_models() + [random_stable_model(rng, n=2) for _ in range(5)]
    bad, worst_gap = [], 0.0
    verdicts = {}
    for m in models:
        st = solve_qinf(m, crosscheck=False)
        nt = normality_test(m, st)
        op = galerkin(m, 16 if m.n <= 2 else 8, st)
        idx = op.basis.interior(2)
        comm = (op.L @ op.L.T - op.L.T @ op.L).tocsr()[idx][:, idx]
        inner = float(abs(comm).max()) if comm.nnz else 0.0
        gal_normal = inner <= 1e-8 * max(1.0, abs(op.L).max())
        gap = interior_commutator_gap(op, nt.commutator_symbol.coeff, margin=2)
        worst_gap = max(worst_gap, gap)
        verdicts[m.label] = nt.is_normal
        if gal_normal != nt.is_normal or gap > 1e-8:
            bad.append(m.label)
    self_zero = normality_test(m_self(), solve_qinf(m_self())).commutator_norm == 0.0
    flagged = not verdicts["M_ELLNN"] and not verdicts["M_KRAMERS"]
    dt = time.perf_counter() - t0
    ok = not bad and self_zero and flagged
    return CriterionResult(
        6,
        "normality",
        ok,
        f"{len(bad)} disagreements, symbol gap {worst_gap:.1e}, B=-I exact zero: {self_zero}, ELLNN/KRAMERS non-normal: {flagged}",
        dt,
        {"verdicts": verdicts},
    )


AXIS_CASES = (
    # model, k0, degree truncation, tolerance on the slope
    (m_ou1, 0, 64, 0.1),
    (m_kramers, 1, 512, 0.1),
    (m_chain3, 2, 512, 0.15),
)


def criterion_7(seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    parts, ok = [], True
    data = {}
    for make, k0, D, tol in AXIS_CASES:
        m = make()
        target = -1.0 / (2 * k0 + 1)
        try:
            fit = chaos_axis_exponent(chaos_operator(m), k0, D=D)
            gated = True
        except TruncationDominated as exc:
            fit, gated = exc.fit, False
        good = gated and abs(fit.slope - target) <= tol
        ok &= good
        data[m.label] = {"slope": fit.slope, "slope_2D": fit.slope_check, "norms": fit.norms, "argmax_degree": fit.argmax_degree}
        parts.append(f"{m.label} {fit.slope:+.3f} (target {target:+.3f}+-{tol}, D={D}->{2 * D}: {fit.slope_check:+.3f})")
    dt = time.perf_counter() - t0
    ok &= dt < 600
    return CriterionResult(7, "imaginary-axis resolvent exponent", bool(ok), "; ".join(parts), dt, data)


def _ray_ratio(op, lat, z) -> float:
    return float(lat.distance(z) / sigma_min(op, z))


def criterion_8(seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    m = m_ellnn()
    st = solve_qinf(m)
    op = galerkin(m, 30, st)
    lat = lattice_for_L(np.linalg.eigvals(m.B), st.trB, 40.0)
    lo, hi = numerical_range_sector(m, st)
    lam = 0.5 * (lo + hi)
    # the sector is symmetric, so the ray is the real axis; t = 5, 15 are
    # eigenvalues there and the ratio is evaluated half-way between them
    ts = (5.5, 15.5)
    r_ell = [_ray_ratio(op, lat, t * (1 + 1j * lam)) for t in ts]
    mk = m_kramers()
    stk = solve_qinf(mk)
    opk = galerkin(mk, 30, stk)
    latk = lattice_for_L(np.linalg.eigvals(mk.B), stk.trB, 40.0)
    r_kr = [_ray_ratio(opk, latk, t * (1 + 1j)) for t in (5.0, 15.0)]
    rng = np.random.default_rng(seed)
    worst_q, worst_br = 0.0, -np.inf
    for mm in (mk, m_chain3()):
        s = solve_qinf(mm)
        sym = build_symbol(mm, s)
        for _ in range(20):
            z = complex(rng.uniform(0.05, 5.0), rng.uniform(-5.0, 5.0))
            w = degenerate_witness(mm, s, z)
            worst_q = max(worst_q, abs(sym(w.x0, w.xi0) - z) / max(1.0, abs(z)))
            worst_br = max(worst_br, w.bracket)
    dt = time.perf_counter() - t0
    g_ell = r_ell[1] / r_ell[0]
    g_kr = r_kr[1] / r_kr[0]
    ok = g_ell >= 1e2 and g_kr >= 1e2 and worst_q <= 1e-10 and worst_br < 0
    return CriterionResult(
        8,
        "resolvent blow-up",
        ok,
        f"ELLNN growth {g_ell:.2e} (lambda={lam:g}, t={ts[0]}->{ts[1]}), KRAMERS growth {g_kr:.2e}, witness |q-z| {worst_q:.1e}, max bracket {worst_br:.2e}",
        dt,
        {"ellnn": r_ell, "kramers": r_kr},
    )


def criterion_9(seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for m in canonical_models():
        op = galerkin(m, 24 if m.n <= 2 else 10)
        for _ in range(20):
            z = complex(-rng.uniform(0.05, 5.0), rng.uniform(-10.0, 10.0))
            worst = max(worst, (1.0 / sigma_min(op, z)) * abs(z.real))
    dt = time.perf_counter() - t0
    ok = worst <= 1.0 + 1e-6
    return CriterionResult(9, "half-plane resolvent bound", ok, f"max |Re z| ||(L_N - z)^-1|| = {worst:.9f} (<= 1 + 1e-6)", dt, {"worst": worst})


def criterion_10(seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    rates = {}
    for make, T in ((m_ou1, 30.0), (m_kramers, 60.0)):
        m = make()
        st = solve_qinf(m)
        f = gaussian_datum(st, 0.25 * np.eye(m.n), 0.5 * np.ones(m.n), 0.0)
        dc = decay_curve(m, st, f, np.linspace(0.0, T, 601))
        tau0 = -float(np.linalg.eigvals(m.B).real.max())
        rates[m.label] = (dc.rate, tau0, dc.window)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for m in canonical_models():
        st = solve_qinf(m)
        op = galerkin(m, 40 if m.n <= 2 else 20, st)
        f = gaussian_datum(st, 0.25 * np.eye(m.n))
        _, traj = hermite_semigroup(op, f, [0.5])
        xs = rng.standard_normal((10, m.n)) @ st.Qinf_sqrt
        exact = mehler_apply(m, st, f, 0.5)(xs)
        worst = max(worst, float(np.abs(hermite_polynomials(op.basis, xs) @ traj[0] - exact).max()))
    dt = time.perf_counter() - t0
    ok = all(abs(r - t) <= 0.1 * t for r, t, _ in rates.values()) and worst <= 1e-4
    desc = ", ".join(f"{k} rate {r:.4f} (tau0 {t:g}, window {w[0]:.1f}-{w[1]:.1f})" for k, (r, t, w) in rates.items())
    return CriterionResult(10, "return to equilibrium", ok, f"{desc}; Mehler vs Hermite {worst:.1e} (<=1e-4)", dt, {"rates": rates})


def criterion_11(seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    rates, mass_err, eq = {}, 0.0, 0.0
    for make, T in ((m_ou1, 20.0), (m_kramers, 40.0)):
        m = make()
        st = solve_qinf(m)
        op = galerkin(m, 40, st)
        mean = 0.3 * np.ones(m.n)
        s = fokker_planck_evolve(op, gaussian_density(mean, st.Qinf), np.linspace(0.0, T, 401))
        rate, window = entropy_fit(s, m)
        tau0 = -float(np.linalg.eigvals(m.B).real.max())
        rates[m.label] = (rate, 2 * tau0)
        mass_err = max(mass_err, float(np.abs(s.mass - 1.0).max()))
        s_eq = fokker_planck_evolve(op, gaussian_density(np.zeros(m.n), st.Qinf), np.linspace(0.0, T, 21))
        eq = max(eq, float(s_eq.e2.max()))
    dt = time.perf_counter() - t0
    # e2(rho|rho) is a sum of squares of rounding-level coefficients
    ok = all(abs(r - t) <= 0.1 * t for r, t in rates.values()) and mass_err <= 1e-8 and eq <= 1e-28
    desc = ", ".join(f"{k} e2 rate {r:.4f} (2 tau0 {t:g})" for k, (r, t) in rates.items())
    return CriterionResult(11, "quadratic relative entropy", ok, f"{desc}; e2(rho|rho) {eq:.1e}; mass error {mass_err:.1e} (<=1e-8)", dt, {"rates": rates})


def scan_csv(op, spec, jobs: int) -> tuple[str, float]:
    z = grid_points(*spec)
    res = pseudospectrum_scan(op, z, jobs=jobs)
    return csv_text(["re", "im", "sigma_min"], [res.z.real, res.z.imag, res.sigma_min]), res.meta["wall_time"]


def available_cpus() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1


def criterion_12(seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    m = m_kramers()
    spec = (-2.0, 8.0, -10.0, 10.0, 41, 41)
    op16 = galerkin(m, 16)
    a, _ = scan_csv(op16, spec, jobs=1)
    b, _ = scan_csv(op16, spec, jobs=8)
    identical = a == b
    op24 = galerkin(m, 24)
    _, t1 = scan_csv(op24, spec, jobs=1)
    _, t8 = scan_csv(op24, spec, jobs=8)
    speedup = t1 / t8
    dt = time.perf_counter() - t0
    ok = identical and speedup >= 3.0
    return CriterionResult(
        12,
        "determinism and parallel speedup",
        ok,
        f"jobs 1 vs 8 byte-identical: {identical}; speedup at N=24 {speedup:.2f}x (>= 3x) on {available_cpus()} available CPU(s)",
        dt,
        {"speedup": speedup, "t1": t1, "t8": t8},
    )


CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
    11: criterion_11,
    12: criterion_12,
}


def run_selftest(only=None, seed: int = 0, echo=None) -> list[CriterionResult]:
    out = []
    for k in sorted(only or CRITERIA):
        r = CRITERIA[k](seed)
        if echo:
            echo(r.line())
        out.append(r)
    return out
