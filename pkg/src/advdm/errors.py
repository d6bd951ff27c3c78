"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class MissingLeafError(LookupError):
    """Gradient requested for a tensor that was never watched on the tape."""


class StepRangeError(ValueError):
    """Diffusion timestep outside the valid range 1..T."""


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""


class TrainingDivergedError(RuntimeError):
    """Training produced NaN loss or failed to reach the configured loss."""


class NumericError(ArithmeticError):
    """NaN or Inf appeared where a finite value is required."""


class SampleSizeError(ValueError):
    """Too few samples for the requested statistic."""


class DataFormatError(ValueError):
    """Malformed dataset file (bad magic, truncation, count mismatch)."""


class CheckpointError(ValueError):
    """Malformed checkpoint (magic, version, hash, or truncation)."""
