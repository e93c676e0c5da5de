"""Pinned discrete membranes: exact laws, samplers and the multiscale cut-off."""

__version__ = "0.1.0"

from .lattice import BoxSpec, Grid, LatticeField, Polymer, Scales, scales_from_epsilon
from .solver import GreenSolver, energy_inner, log_partition
from .pinning import PinnedSetDistribution, fkg_lattice_check, zeta_exact
from .sampler import ChainConfig, HeatBath, covariance_profile, estimate_mass, estimate_variance
from .cones import simplex_directions, local_poincare_ratio, interpolation_ratio
from .cutoff import CutoffParams, build_cutoff, build_hierarchy, hole_filler_terms
from .config import ExperimentConfig

__all__ = [
    "BoxSpec", "Grid", "LatticeField", "Polymer", "Scales", "scales_from_epsilon",
    "GreenSolver", "energy_inner", "log_partition",
    "PinnedSetDistribution", "fkg_lattice_check", "zeta_exact",
    "ChainConfig", "HeatBath", "covariance_profile", "estimate_mass", "estimate_variance",
    "simplex_directions", "local_poincare_ratio", "interpolation_ratio",
    "CutoffParams", "build_cutoff", "build_hierarchy", "hole_filler_terms",
    "ExperimentConfig", "__version__",
]
