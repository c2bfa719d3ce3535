"""Deterministic CSV/JSON output and the analysis report."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import NotElliptic
from .model import OUModel, compute_k0, solve_qinf
from .spectrum import lattice_for_L
from .symbol import (
    build_symbol,
    hamilton_map,
    normality_test,
    numerical_range_sector,
    singular_space,
    tau0_from_hamilton,
)


def fmt(x) -> str:
    """17 significant digits, enough to round-trip a double."""
    return f"{float(x):.17g}"


def csv_text(header: list[str], columns: list) -> str:
    cols = [np.asarray(c, float).ravel() for c in columns]
    lines = [",".join(header)]
    for row in zip(*cols):
        lines.append(",".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path, header: list[str], columns: list) -> Path:
    path = Path(path)
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write(csv_text(header, columns))
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, complex):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def json_text(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(json_text(obj))
    return path


def content_hash(obj) -> str:
    blob = json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(eq=False)
class AnalysisReport:
    label: str
    n: int
    hypoelliptic: bool
    k0: int | None
    Qinf: list
    trB: float
    singular_space_dim: int
    chain_index: int
    normal: bool
    commutator_norm: float
    lattice: list
    lattice_counts: list
    cutoff: float
    tau0: float
    sector: list | None
    degenerate: bool
    outputs: list = field(default_factory=list)
    sha256: str = ""

    def payload(self) -> dict:
        d = asdict(self)
        d.pop("sha256")
        d.pop("outputs")
        return d

    def seal(self) -> "AnalysisReport":
        self.sha256 = content_hash(self.payload())
        return self

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def analyze(model: OUModel, cutoff: float = 3.0) -> AnalysisReport:
    """model_core, symbol and lattice pipeline on one model.

    Raises NoInvariantMeasure when sigma(B) is not in the open left half-plane.
    """
    hypo = compute_k0(model, strict=False)
    stat = solve_qinf(model)
    sym = build_symbol(model, stat)
    h = hamilton_map(sym)
    ss = singular_space(h, sym)
    nt = normality_test(model, stat)
    lat = lattice_for_L(np.linalg.eigvals(model.B), stat.trB, cutoff)
    try:
        sector = list(numerical_range_sector(model, stat))
        degenerate = False
    except NotElliptic:
        sector, degenerate = None, True
    rep = AnalysisReport(
        label=model.label,
        n=model.n,
        hypoelliptic=hypo.hypoelliptic,
        k0=hypo.k0,
        Qinf=stat.Qinf.tolist(),
        trB=stat.trB,
        singular_space_dim=ss.dim,
        chain_index=ss.chain_index,
        normal=nt.is_normal,
        commutator_norm=nt.commutator_norm,
        lattice=[[float(z.real), float(z.imag)] for z in lat.points],
        lattice_counts=[int(c) for c in lat.rep_counts],
        cutoff=float(cutoff),
        tau0=tau0_from_hamilton(h),
        sector=sector,
        degenerate=degenerate,
    )
    return rep.seal()
