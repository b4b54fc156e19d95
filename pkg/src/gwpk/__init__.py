"""Gabor wave-packet analysis of Schrödinger-type propagators.

Flows of real symbols, split-step and Weyl propagators, Gabor matrices with
exponential off-diagonal decay, type-I Fourier integral operators and
analytic-regularity diagnostics, all on uniform one-dimensional grids.
"""

from .analytic import (
    RegionMask,
    WeightFunction,
    boundedness_check,
    delta_neighborhood,
    energy_functional,
    energy_profile,
    mod_norm,
    radius_track,
    regular_region,
    singularity_propagation_check,
)
from .field import GridSpec, SampledState, gaussian_state, l2_norm
from .fio import construct_phase, fio_apply
from .gabor_matrix import GaborMatrix, assemble, fit_sparsity, sparse_apply, sparsify
from .hamiltonian import SymbolModel, get_symbol, integrate_flow
from .kernels import BACKEND
from .propagator import PropagatorHandle, evolve, metaplectic_apply
from .tf import Lattice, Window, istft, stft

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "GaborMatrix",
    "GridSpec",
    "Lattice",
    "PropagatorHandle",
    "RegionMask",
    "SampledState",
    "SymbolModel",
    "WeightFunction",
    "Window",
    "assemble",
    "boundedness_check",
    "construct_phase",
    "delta_neighborhood",
    "energy_functional",
    "energy_profile",
    "evolve",
    "fio_apply",
    "fit_sparsity",
    "gaussian_state",
    "get_symbol",
    "integrate_flow",
    "istft",
    "l2_norm",
    "metaplectic_apply",
    "mod_norm",
    "radius_track",
    "regular_region",
    "singularity_propagation_check",
    "sparse_apply",
    "sparsify",
    "stft",
]
