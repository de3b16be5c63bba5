"""Shared exception types."""


class SlipflowError(Exception):
    """Base class for all package errors."""


class ConfigError(SlipflowError):
    """Bad or unsupported configuration value."""


class DegenerateStateError(SlipflowError):
    """Macroscopic state left the admissible region (rho <= 0 or T <= 0)."""


class NewtonError(SlipflowError):
    """Moment-matching Newton iteration failed to converge."""

    def __init__(self, msg, defect=None):
        super().__init__(msg)
        self.defect = defect


class SolvabilityError(SlipflowError):
    """Right-hand side or boundary datum violates a solvability condition."""

    def __init__(self, msg, residuals=None):
        super().__init__(msg)
        self.residuals = residuals


class AssemblyError(SlipflowError):
    """Operator assembly produced an inconsistent matrix."""


class BlowupError(SlipflowError):
    """Time integration lost positivity or produced non-finite values."""

    def __init__(self, msg, time=None):
        super().__init__(msg)
        self.time = time


class IterationError(SlipflowError):
    """Fixed-point or sweep iteration failed to reach tolerance."""


class StageError(SlipflowError):
    """Hierarchy stage requested out of dependency order or not built."""
