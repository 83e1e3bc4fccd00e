"""Exception types shared across the package.

The CLI maps ConfigError to exit code 2 and every other failure to 3, so
operational errors must not subclass ConfigError.
"""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid configuration, CLI arguments, or missing input artifacts."""


class ChecksumError(RuntimeError):
    """Stored checksum does not match file contents."""


class GenerationError(RuntimeError):
    """Demonstration generation failed to collect enough successes."""


class CalibrationError(RuntimeError):
    """Perturbation-scale calibration hit a degenerate statistic."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
