"""Spectral and pseudospectral analysis of Ornstein-Uhlenbeck operators.

The generator ``L = -1/2 div(Q grad) - Bx.grad`` acts on L2(mu), mu the
invariant Gaussian. The package covers the model data (Kalman rank,
hypoellipticity index, Qinf), the quadratic symbol and its Hamilton map,
the eigenvalue lattice, Hermite-Galerkin discretisations with
pseudospectra, and the Mehler semigroup with return-to-equilibrium rates.
"""

from .canonical import CANONICAL, canonical_models
from .errors import OUError
from .hermite import chaos_axis_exponent, chaos_operator, galerkin, pseudospectrum_scan, sigma_min
from .mehler import decay_curve, fokker_planck_evolve, gaussian_datum, mehler_apply
from .model import OUModel, compute_k0, load_model, solve_qinf, validate_model
from .report import analyze
from .spectrum import lattice_for_L, spectrum_lattice
from .symbol import build_symbol, hamilton_map, normality_test, singular_space

__version__ = "0.1.0"

__all__ = [
    "CANONICAL",
    "OUError",
    "OUModel",
    "analyze",
    "build_symbol",
    "canonical_models",
    "chaos_axis_exponent",
    "chaos_operator",
    "compute_k0",
    "decay_curve",
    "fokker_planck_evolve",
    "galerkin",
    "gaussian_datum",
    "hamilton_map",
    "lattice_for_L",
    "load_model",
    "mehler_apply",
    "normality_test",
    "pseudospectrum_scan",
    "sigma_min",
    "singular_space",
    "solve_qinf",
    "spectrum_lattice",
    "validate_model",
]
