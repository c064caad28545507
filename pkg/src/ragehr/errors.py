"""Exception hierarchy shared across pipeline stages.

``ValidationError`` maps to CLI exit code 1, everything deriving from
``PipelineRuntimeError`` maps to exit code 2.
"""


class ValidationError(ValueError):
    """Bad input data or configuration."""


class PipelineRuntimeError(RuntimeError):
    """Failure while executing a stage (gateway, training, metrics)."""


class UndefinedMetricError(PipelineRuntimeError, ValueError):
    """Metric is undefined for the given labels (e.g. a single class)."""
