"""Finite-ensemble variety dynamics and its continuum and wavefunction limits."""

from .ensemble import (
    CutoffParams,
    DensitySpec,
    EnsembleState,
    PhysicalConstants,
    sample_ensemble,
    set_phases_from_field,
    validate_state,
)
from .errors import (
    ConvergenceError,
    DegenerateConfigurationError,
    DynamicsAborted,
    InvalidInputError,
    RelaxationError,
    ResolutionError,
)
from .variety import compute_views, distinctiveness, variety, variety_gradient, variety_potential

__version__ = "0.1.0"
