"""Pseudo-spectral simulation and verification toolkit for stochastic viscous
scalar conservation laws du = -dx A(u) dt + nu uxx dt + dW on the unit torus."""

from svcl.spectral import ModeBasis, SpectralField, mode_field
from svcl.flux import FluxSpec
from svcl.noise import NoiseSpec, NoisePath, trace_h2
from svcl.integrator import ModelSpec, SolverConfig, run_single, run_coupled, picard_solve
from svcl.ergodic import (
    default_burn_in,
    ergodic_average,
    estimates_agree,
    confluence_experiment,
    tightness_diagnostic,
    dissipation_entry_time,
    entry_time_bound,
)
from svcl.config import RunConfig, parse_config

__version__ = "0.1.0"

__all__ = [
    "ModeBasis",
    "SpectralField",
    "mode_field",
    "FluxSpec",
    "NoiseSpec",
    "NoisePath",
    "trace_h2",
    "ModelSpec",
    "SolverConfig",
    "run_single",
    "run_coupled",
    "picard_solve",
    "default_burn_in",
    "ergodic_average",
    "estimates_agree",
    "confluence_experiment",
    "tightness_diagnostic",
    "dissipation_entry_time",
    "entry_time_bound",
    "RunConfig",
    "parse_config",
    "__version__",
]
