"""Matrix-product-state simulator for a Jaynes-Cummings cavity with delayed coherent feedback."""

__version__ = "0.1.0"

from .errors import ConfigError, DimensionError, NumericalError, TruncationFailure
from .evolution import RunPlan, TimeSeries, run
from .linear import LinearParams, PoleSet, effective_decay, find_poles, linear_spectrum, transfer_denominator
from .model import ModelParams, step_unitary, system_hamiltonian, system_state
from .mps import MpsState, load_state, save_state
from .observables import CorrelationSeries, Spectrum, g1_output, g2_output, power_spectrum, trace_fourier
from .oracle import closed_evolve, lindblad_evolve, regression_correlations, steady_state
from .tensor import SvdPolicy

__all__ = [
    "ConfigError",
    "DimensionError",
    "NumericalError",
    "TruncationFailure",
    "RunPlan",
    "TimeSeries",
    "run",
    "LinearParams",
    "PoleSet",
    "effective_decay",
    "find_poles",
    "linear_spectrum",
    "transfer_denominator",
    "ModelParams",
    "step_unitary",
    "system_hamiltonian",
    "system_state",
    "MpsState",
    "load_state",
    "save_state",
    "CorrelationSeries",
    "Spectrum",
    "g1_output",
    "g2_output",
    "power_spectrum",
    "trace_fourier",
    "closed_evolve",
    "lindblad_evolve",
    "regression_correlations",
    "steady_state",
    "SvdPolicy",
]
