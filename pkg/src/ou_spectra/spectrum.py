"""Exact spectral predictions: the lattice of eigenvalues, the gap and resolvent regions."""

from __future__ import annotations

import logging
import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

DEDUP_TOL = 1e-10
RESONANCE_TOL = 1e-8
MERGE_TOL = 1e-4


class NearResonanceWarning(UserWarning):
    pass


@dataclass(eq=False)
class SpectrumLattice:
    """Lattice points {sum_mu mu k_mu} with Re >= -cutoff.

    ``rep_counts`` counts tuples (k_mu) landing on each point. It is a
    diagnostic, not the algebraic multiplicity of the eigenvalue.
    """

    points: np.ndarray
    rep_counts: np.ndarray
    tau0: float
    eigs_B: np.ndarray
    cutoff: float

    def __len__(self) -> int:
        return len(self.points)

    def distance(self, z) -> np.ndarray:
        z = np.asarray(z, complex)
        return np.abs(z[..., None] - self.points).min(axis=-1)


def merged_eigenvalues(eigs_B, tol: float = MERGE_TOL) -> np.ndarray:
    """Eigenvalues with numerically split Jordan clusters replaced by their mean."""
    ev = np.asarray(eigs_B, complex).copy()
    scale = max(1.0, np.abs(ev).max()) if ev.size else 1.0
    used = np.zeros(ev.size, bool)
    for i in range(ev.size):
        if used[i]:
            continue
        # a size-m Jordan block splits at eps^(1/m); grow the cluster transitively
        grp = np.zeros(ev.size, bool)
        grp[i] = True
        while True:
            near = (~used) & (np.abs(ev[:, None] - ev[grp][None, :]).min(axis=1) <= tol * scale)
            if not (near & ~grp).any():
                break
            grp |= near
        ev[grp] = ev[grp].mean()
        used |= grp
    # exact conjugate pairing, B is real
    ev = np.where(np.abs(ev.imag) <= 1e-12 * scale, ev.real + 0j, ev)
    return ev


def tau0(eigs_B) -> float:
    ev = np.asarray(eigs_B, complex)
    t = -float(ev.real.max())
    if not t > 0:
        raise ValueError("tau0 requires sigma(B) in the open left half-plane")
    return t


def spectrum_lattice(eigs_B, cutoff: float) -> SpectrumLattice:
    """Breadth-first enumeration of N-combinations of sigma(B) with Re >= -cutoff."""
    ev = merged_eigenvalues(eigs_B)
    if ev.size and ev.real.max() >= 0:
        raise ValueError("lattice requires sigma(B) in the open left half-plane")
    cutoff = float(cutoff)
    m = ev.size
    start = (0,) * m
    seen = {start}
    queue = deque([start])
    found: list[tuple[complex, tuple]] = []
    slack = 1e-12 * max(1.0, cutoff)
    while queue:
        k = queue.popleft()
        val = complex(np.dot(k, ev)) if m else 0j
        found.append((val, k))
        for j in range(m):
            nk = k[:j] + (k[j] + 1,) + k[j + 1 :]
            if nk in seen:
                continue
            if (val + ev[j]).real >= -cutoff - slack:
                seen.add(nk)
                queue.append(nk)
    pts: list[complex] = []
    counts: list[int] = []
    reps: list[tuple] = []
    for val, k in found:
        for idx, p in enumerate(pts):
            d = abs(val - p)
            if d <= DEDUP_TOL:
                counts[idx] += 1
                break
            if d <= RESONANCE_TOL and reps[idx] != k:
                warnings.warn(f"near-resonant lattice points at distance {d:.2e}", NearResonanceWarning, stacklevel=2)
        else:
            pts.append(val)
            counts.append(1)
            reps.append(k)
    pts_arr = np.array(pts, complex)
    # clean rounding noise so conjugate pairs and zero are exact
    pts_arr = np.where(np.abs(pts_arr.imag) <= DEDUP_TOL, pts_arr.real + 0j, pts_arr)
    order = np.lexsort((pts_arr.imag, -pts_arr.real))
    return SpectrumLattice(
        points=pts_arr[order],
        rep_counts=np.array(counts, int)[order],
        tau0=tau0(ev) if m else np.inf,
        eigs_B=np.asarray(eigs_B, complex),
        cutoff=cutoff,
    )


def lattice_for_L(eigs_B, trB: float, cutoff: float) -> SpectrumLattice:
    """Spectrum of the conjugated operator: lambda -> -lambda - Tr(B)/2.

    ``cutoff`` bounds the real part of the P-lattice before the map, so the
    returned points satisfy Re <= cutoff - Tr(B)/2.
    """
    lat = spectrum_lattice(eigs_B, cutoff)
    pts = -lat.points - 0.5 * trB
    pts = pts.real + 1j * (pts.imag + 0.0)
    order = np.lexsort((pts.imag, pts.real))
    return SpectrumLattice(
        points=pts[order],
        rep_counts=lat.rep_counts[order],
        tau0=lat.tau0,
        eigs_B=lat.eigs_B,
        cutoff=lat.cutoff,
    )


def gamma_region(z: complex, k0: int, trB: float, c: float) -> bool:
    """Membership in the region where the resolvent estimate of order 1/(2k0+1) holds."""
    if c <= 0:
        raise ValueError("c must be positive")
    z = complex(z)
    center = 1.0 - 0.5 * trB
    if z.real > 0.5 * (1.0 - trB):
        return False
    return abs(z.real - center) <= c * abs(z - center) ** (1.0 / (2 * k0 + 1))


def halfplane_resolvent_bound(z: complex, trB: float) -> float | None:
    """Upper bound 1/(Re z + Tr(B)/2) on the resolvent of P in L2(mu), when it applies."""
    d = complex(z).real + 0.5 * trB
    if d <= 0:
        return None
    return 1.0 / d
