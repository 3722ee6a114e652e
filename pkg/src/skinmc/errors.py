"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
NumericError (and subclasses) -> 3, GuardError -> 4.
"""


class SkinmcError(Exception):
    """Base class for all package errors."""


class ConfigError(SkinmcError):
    """Invalid configuration: bad value, unknown key, missing field."""


class NumericError(SkinmcError):
    """Numerical failure during a run (degeneracy, invariant violation)."""


class ProtocolError(NumericError):
    """Step protocol violated, e.g. jump probability above the safe bound."""


class DegenerateStateError(NumericError):
    """Quasimode matrix lost rank; the state is no longer a valid Slater state."""


class GuardError(SkinmcError):
    """Resource guard refused the request (sector too large, overwrite)."""
