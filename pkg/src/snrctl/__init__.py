"""Optimal encoder/decoder synthesis for plants controlled over SNR-limited channels.

The library builds doubly-coprime factors of the plant, minimizes a convex
Youla-parametrized cost over FIR parameters on a frequency grid, splits the
resulting controller into an outer encoder ``C`` and a decoder ``D``, and
checks the loop analytically and by simulation.
"""

__version__ = "0.1.0"

from .convex_solver import SolverReport, SolverStatus, assemble, minimize, verify_lmi
from .factorization import CoprimeFactors, coprime_factorize, fit_magnitude_sq, spectral_factor_trig
from .lti_core import (
    FrequencyGrid,
    GeneralizedPlant,
    RationalTransfer,
    StateSpaceModel,
    blocks_from_state_space,
    h2_norm_sq,
    l1_norm_grid,
    l2_norm_sq,
)
from .synthesis import ChannelSpec, SynthesisResult, min_snr_for_stabilization, synthesize
from .validation import analytic_cost, check_internal_stability, closed_loop, simulate
from .youla_program import FirParameter, build_program_data, k_from_q, phi

__all__ = [
    "__version__",
    "ChannelSpec",
    "CoprimeFactors",
    "FirParameter",
    "FrequencyGrid",
    "GeneralizedPlant",
    "RationalTransfer",
    "SolverReport",
    "SolverStatus",
    "StateSpaceModel",
    "SynthesisResult",
    "analytic_cost",
    "assemble",
    "blocks_from_state_space",
    "build_program_data",
    "check_internal_stability",
    "closed_loop",
    "coprime_factorize",
    "fit_magnitude_sq",
    "h2_norm_sq",
    "k_from_q",
    "l1_norm_grid",
    "l2_norm_sq",
    "min_snr_for_stabilization",
    "minimize",
    "phi",
    "simulate",
    "spectral_factor_trig",
    "synthesize",
    "verify_lmi",
]
