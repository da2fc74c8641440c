"""Exception types shared across the package."""


class TransmechError(Exception):
    """Base class for package-specific failures."""


class DimensionError(TransmechError, ValueError):
    """Operator or state shape incompatible with the requested layout."""


class LayoutError(TransmechError, ValueError):
    """Slot index or layout structure invalid for the operation."""


class HermiticityError(TransmechError, ValueError):
    """Matrix violates the hermiticity (or anti-hermiticity) contract."""


class PositivityError(TransmechError, ValueError):
    """Eigenvalue below the allowed negativity floor."""


class TraceError(TransmechError, ValueError):
    """Density-matrix trace too far from one."""


class SingularityError(TransmechError, ArithmeticError):
    """Dressed model evaluated too close to a pole of the effective couplings."""


class ConfigError(TransmechError, ValueError):
    """Configuration failed schema validation."""


class CheckpointError(TransmechError, RuntimeError):
    """Checkpoint file unreadable or inconsistent with the requesting run."""


class IntegrationError(TransmechError, RuntimeError):
    """Integrator could not advance (step underflow or non-finite state)."""


class HealthError(TransmechError, RuntimeError):
    """Trajectory violated a physicality threshold.

    Carries the partial trajectory and the failing health report so callers
    can persist what was computed before the violation.
    """

    def __init__(self, message, trajectory=None, report=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.report = report
