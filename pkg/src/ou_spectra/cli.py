"""Command-line front end: ``ou-spectra <command> [options]``.

Exit codes: 0 success, 1 other analysis failure (or failed self-test),
2 invalid model, 3 no invariant measure, 4 truncation too small,
5 datum not integrable or not normalized.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .canonical import CANONICAL
from .errors import (
    FitWindowEmpty,
    NoInvariantMeasure,
    NotIntegrable,
    NotNormalized,
    OUError,
    SingularQinf,
    TruncationDominated,
    TruncationTooSmall,
    ValidationError,
)
from .model import load_model, solve_qinf
from .report import analyze, csv_text, fmt, json_text, write_json

logger = logging.getLogger("ou_spectra")

EXIT_CODES = (
    (ValidationError, 2),
    (NoInvariantMeasure, 3),
    (SingularQinf, 3),
    (TruncationTooSmall, 4),
    (TruncationDominated, 4),
    (NotIntegrable, 5),
    (NotNormalized, 5),
)


def _setup_logging() -> None:
    level = os.environ.get("OU_SPECTRA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _floats(text: str, count: int | None = None) -> list[float]:
    vals = [float(v) for v in text.split(",")]
    if count is not None and len(vals) != count:
        raise argparse.ArgumentTypeError(f"expected {count} comma-separated numbers, got {text!r}")
    return vals


def _complex(text: str) -> complex:
    re_, im_ = _floats(text, 2)
    return complex(re_, im_)


def get_model(spec: str):
    """A model file, or the name of a canonical model such as M_KRAMERS."""
    if spec.upper() in CANONICAL:
        return CANONICAL[spec.upper()]()
    try:
        return load_model(spec)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read model file {spec}: {exc}") from exc


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _sidecar(out: str | None, meta: dict) -> None:
    if out:
        write_json(str(out) + ".json", meta)


# commands ----------------------------------------------------------------


def cmd_analyze(args) -> int:
    model = get_model(args.model)
    rep = analyze(model, cutoff=args.cutoff)
    if args.out:
        rep.outputs = [str(args.out)]
    _emit(json_text(rep.to_dict()), args.out)
    return 0


def _galerkin(args):
    from .hermite import galerkin

    model = get_model(args.model)
    return galerkin(model, args.N)


def cmd_pseudospec(args) -> int:
    from .hermite import grid_points, pseudospectrum_scan

    op = _galerkin(args)
    spec = args.grid
    z = grid_points(*spec[:4], int(spec[4]), int(spec[5]))
    res = pseudospectrum_scan(op, z, jobs=args.jobs)
    _emit(csv_text(["re", "im", "sigma_min"], [res.z.real, res.z.imag, res.sigma_min]), args.out)
    meta = dict(res.meta, grid=[fmt(v) for v in spec])
    _sidecar(args.out, meta)
    return 0


def cmd_ray(args) -> int:
    from .hermite import ray_probe
    from .spectrum import lattice_for_L

    op = _galerkin(args)
    t0, t1, count = args.t
    ts = np.linspace(t0, t1, int(count))
    z0 = args.z0 if args.z0 is not None else complex(-0.5 * op.stat.trB)
    norms = ray_probe(op, z0, args.direction, ts)
    zs = z0 + ts * args.direction
    cutoff = max(1.0, float(np.abs(zs).max()) + abs(op.stat.trB))
    lat = lattice_for_L(np.linalg.eigvals(op.model.B), op.stat.trB, cutoff)
    dist = lat.distance(zs)
    _emit(csv_text(["t", "re", "im", "resolvent_norm", "lattice_distance"], [ts, zs.real, zs.imag, norms, dist]), args.out)
    _sidecar(args.out, {"model": op.model.label, "N": op.N, "z0": [z0.real, z0.imag], "direction": [args.direction.real, args.direction.imag]})
    return 0


def cmd_axis_fit(args) -> int:
    from .hermite import chaos_axis_exponent, chaos_operator, galerkin, imaginary_axis_exponent
    from .model import compute_k0

    model = get_model(args.model)
    k0 = compute_k0(model).k0
    nu0, nu1, points = args.nu
    if args.truncation == "degree":
        fit = chaos_axis_exponent(chaos_operator(model), k0, (nu0, nu1), int(points), D=args.N)
        meta = {"D": fit.D, "D_check": fit.D_check, "argmax_degree": fit.argmax_degree}
    else:
        fit = imaginary_axis_exponent(galerkin(model, args.N), k0, (nu0, nu1), int(points))
        meta = {"N": fit.N, "N_check": fit.N_check}
    meta.update(model=model.label, k0=k0, slope=fit.slope, residual=fit.residual, slope_check=fit.slope_check, expected=-1.0 / (2 * k0 + 1))
    _emit(csv_text(["nu", "resolvent_norm"], [fit.nus, fit.norms]), args.out)
    _sidecar(args.out, meta)
    if not args.out:
        sys.stderr.write(f"slope {fit.slope:.6f} (expected {-1.0 / (2 * k0 + 1):.6f})\n")
    return 0


def _datum(stat, text: str | None, n: int):
    from .mehler import gaussian_datum

    if text:
        d = json.loads(Path(text).read_text()) if Path(text).is_file() else json.loads(text)
        return gaussian_datum(stat, d.get("M"), d.get("b"), float(d.get("c", 0.0)))
    return gaussian_datum(stat, 0.25 * np.eye(n), 0.5 * np.ones(n), 0.0)


def cmd_decay(args) -> int:
    from .mehler import decay_curve

    model = get_model(args.model)
    stat = solve_qinf(model)
    f = _datum(stat, args.datum, model.n)
    t = np.linspace(0.0, args.t_max, args.steps) if args.t_max > 0 else np.zeros(1)
    dc = decay_curve(model, stat, f, t)
    _emit(csv_text(["t", "distance"], [dc.t, dc.distance]), args.out)
    meta = {"model": model.label, "fitted_rate": dc.rate, "window": list(dc.window), "constant": dc.constant, "tau": dc.tau}
    _sidecar(args.out, meta)
    if not args.out:
        sys.stderr.write(f"fitted rate {dc.rate:.6f}\n")
    return 0


def cmd_entropy(args) -> int:
    from .hermite import galerkin
    from .mehler import entropy_fit, fokker_planck_evolve, gaussian_density

    model = get_model(args.model)
    stat = solve_qinf(model)
    op = galerkin(model, args.N, stat)
    mean = np.asarray(args.mean if args.mean is not None else [0.3] * model.n, float)
    if mean.size != model.n:
        raise ValidationError(f"mean has {mean.size} entries, model has n = {model.n}")
    g = gaussian_density(mean, stat.Qinf)

    def f0(X):
        return args.mass * g(X)

    t = np.linspace(0.0, args.t_max, args.steps) if args.t_max > 0 else np.zeros(1)
    state = fokker_planck_evolve(op, f0, t)
    meta = {"model": model.label, "N": op.N, "mass_error": float(np.abs(state.mass - 1).max())}
    try:
        rate, window = entropy_fit(state, model)
        meta.update(fitted_rate=rate, window=list(window))
    except FitWindowEmpty as exc:
        logger.warning("no entropy rate: %s", exc)
        meta.update(fitted_rate=None, window=None)
    _emit(csv_text(["t", "e2", "mass"], [state.t, state.e2, state.mass]), args.out)
    _sidecar(args.out, meta)
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    only = [int(k) for k in args.only.split(",")] if args.only else None
    results = run_selftest(only, seed=args.seed, echo=lambda s: print(s, flush=True))
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    return 0 if passed == len(results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ou-spectra", description="Spectral analysis of Ornstein-Uhlenbeck operators.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, N=None):
        sp.add_argument("--model", required=True, help="model JSON file or canonical name (M_OU1, M_SELF, M_KRAMERS, M_ELLNN, M_CHAIN3)")
        sp.add_argument("--out", default=None, help="output path (stdout if omitted); metadata goes to OUT.json")
        sp.add_argument("--seed", type=int, default=0)
        if N is not None:
            sp.add_argument("--N", type=int, default=N, help="truncation level")

    a = sub.add_parser("analyze", help="model, symbol and spectrum summary as JSON")
    common(a)
    a.add_argument("--cutoff", type=float, default=3.0)
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("pseudospec", help="sigma_min(L_N - z) on a grid")
    common(s, N=16)
    s.add_argument("--grid", type=lambda t: _floats(t, 6), default=[-2.0, 8.0, -10.0, 10.0, 41, 41], help="re0,re1,im0,im1,nx,ny")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_pseudospec)

    r = sub.add_parser("ray", help="resolvent norm along z0 + t * direction")
    common(r, N=30)
    r.add_argument("--z0", type=_complex, default=None, help="re,im (default -Tr(B)/2)")
    r.add_argument("--direction", type=_complex, default=complex(1.0, 1.0), help="re,im")
    r.add_argument("--t", type=lambda t: _floats(t, 3), default=[1.0, 15.0, 15], help="t0,t1,count")
    r.set_defaults(func=cmd_ray)

    x = sub.add_parser("axis-fit", help="log-log slope of the resolvent norm along the imaginary axis")
    common(x, N=256)
    x.add_argument("--nu", type=lambda t: _floats(t, 3), default=[8.0, 64.0, 8], help="nu0,nu1,points")
    x.add_argument("--truncation", choices=("degree", "box"), default="degree", help="total degree <= N, or every index < N")
    x.set_defaults(func=cmd_axis_fit)

    d = sub.add_parser("decay", help="L2(mu) distance of T(t) f to its mean")
    common(d)
    d.add_argument("--datum", default=None, help='JSON string or file {"M": .., "b": .., "c": ..}')
    d.add_argument("--t-max", type=float, default=30.0)
    d.add_argument("--steps", type=int, default=601)
    d.set_defaults(func=cmd_decay)

    e = sub.add_parser("entropy", help="quadratic relative entropy along the Fokker-Planck flow")
    common(e, N=40)
    e.add_argument("--mean", type=_floats, default=None, help="mean of the initial Gaussian (covariance Qinf)")
    e.add_argument("--mass", type=float, default=1.0, help="total mass of the initial density")
    e.add_argument("--t-max", type=float, default=20.0)
    e.add_argument("--steps", type=int, default=401)
    e.set_defaults(func=cmd_entropy)

    t = sub.add_parser("selftest", help="run the acceptance checks")
    t.add_argument("--only", default=None, help="comma-separated criterion numbers")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except OUError as exc:
        code = next((c for cls, c in EXIT_CODES if isinstance(exc, cls)), 1)
        kind = type(exc).__name__
        sys.stderr.write(f"error: {kind}: {exc}\n")
        if isinstance(exc, TruncationDominated):
            sys.stderr.write("hint: increase --N\n")
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        code = 2
    logger.debug("%s finished in %.2fs with code %d", args.command, time.perf_counter() - t0, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
