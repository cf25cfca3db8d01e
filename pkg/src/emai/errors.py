"""Exception hierarchy and the CLI exit-code contract."""


class EmaiError(Exception):
    """Base class for all domain errors."""

    exit_code = 5


class ConfigError(EmaiError):
    """Schema or invariant violation in a system configuration."""

    exit_code = 1


class PowerFlowError(EmaiError):
    """Power flow failed to converge or hit a singular Jacobian."""

    exit_code = 2


class ModeSearchError(EmaiError):
    """Mode finding failed for every supplied seed."""

    exit_code = 3


class OracleDisagreement(EmaiError):
    """Cross-validation between the impedance and state-space paths
    exceeded tolerance (raised only under --strict)."""

    exit_code = 4


class NumericalError(EmaiError):
    """Singular matrix or other numeric failure at an evaluation point."""

    exit_code = 5
