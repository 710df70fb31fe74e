"""Exception types shared across the package.

The CLI maps these onto exit codes (see ``marglik.cli``): configuration
problems exit 1, data problems exit 2, sampling or estimation failures
exit 3.
"""

from __future__ import annotations


class MarglikError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MarglikError):
    """Invalid configuration: bad sampler settings, malformed config file,
    unknown model or estimator names, inconsistent options."""


class DataError(MarglikError):
    """Invalid data: unreadable files, non-finite values, too few rows,
    wrong observation width."""


class ModelError(MarglikError):
    """Invalid model usage: dimension mismatches, non-finite parameters,
    hyperparameters outside their domain."""


class SamplerError(MarglikError):
    """Sampling failure: initialization never found a finite density,
    diagnostic preconditions violated."""


class EstimatorError(MarglikError):
    """Estimation failure: inputs that make an estimator undefined,
    such as mismatched temperatures or total underflow."""
