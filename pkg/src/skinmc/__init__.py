"""Quantum-trajectory simulator for monitored free-fermion chains with feedback.

Bond detectors continuously monitor an L-site hopping chain; every click
triggers a local phase feedback. The Gaussian engine evolves Slater
states through the resulting stochastic dynamics at large L, a dense
fixed-sector engine provides an exact oracle (and handles interactions),
and the analysis layer extracts entropies, currents and scaling fits.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DegenerateStateError,
    GuardError,
    NumericError,
    ProtocolError,
    SkinmcError,
)
from .model import (
    JumpSpec,
    LatticeConfig,
    build_effective_matrix,
    build_feedback_matrix,
    build_hopping_matrix,
    build_jump_specs,
)
from .trajectory import (
    EnsembleStats,
    JumpDecisionStream,
    StepProtocol,
    TrajectoryRecord,
    default_t_max,
    run_ensemble,
    run_trajectory,
)

__all__ = [
    "__version__",
    "ConfigError", "DegenerateStateError", "GuardError", "NumericError",
    "ProtocolError", "SkinmcError",
    "JumpSpec", "LatticeConfig", "build_effective_matrix",
    "build_feedback_matrix", "build_hopping_matrix", "build_jump_specs",
    "EnsembleStats", "JumpDecisionStream", "StepProtocol", "TrajectoryRecord",
    "default_t_max", "run_ensemble", "run_trajectory",
]
