"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument is malformed (wrong length, out-of-range index, ...)."""


class InvalidConfigError(ValueError):
    """A configuration is internally inconsistent or violates a constraint."""


class InvalidCallError(RuntimeError):
    """An operation was invoked in a mode its arguments do not support."""


class IntegratorDivergenceError(RuntimeError):
    """A time integrator produced non-finite or runaway values."""

    def __init__(self, message, step_index=None, trajectory_index=None):
        super().__init__(message)
        self.step_index = step_index
        self.trajectory_index = trajectory_index


class BundleFormatError(ValueError):
    """A container file has a malformed header or inconsistent shapes."""


class ChecksumError(BundleFormatError):
    """A container file failed its CRC32 check (truncated or corrupted)."""


class TrainingDivergedError(RuntimeError):
    """Training produced non-finite losses beyond the tolerated budget."""


class InvalidComparisonError(ValueError):
    """Results being compared were produced under different rollout specifications."""
