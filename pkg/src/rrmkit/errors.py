"""Exception types shared across rrmkit modules."""


class RrmkitError(Exception):
    """Base class for all rrmkit errors."""


class DimensionError(RrmkitError, ValueError):
    """Array or feature-vector shape does not match what the consumer expects."""


class EmptyBatchError(RrmkitError, ValueError):
    """A training batch or dataset was empty."""


class DivergenceError(RrmkitError, RuntimeError):
    """Training loss became non-finite.

    Attributes:
        epoch: epoch index at which the non-finite loss was observed.
    """

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class ProtocolError(RrmkitError, RuntimeError):
    """Agent decision protocol violated (select/observe out of order)."""


class StalePolicyError(RrmkitError, ValueError):
    """A policy update carried a version not newer than the current one."""


class ReplayFormatError(RrmkitError, ValueError):
    """A persisted transition record could not be parsed.

    Attributes:
        line: 1-based line number of the offending record, if known.
    """

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class PolicyFormatError(RrmkitError, ValueError):
    """A policy document violated the policy JSON schema.

    Attributes:
        field: name of the missing or malformed field.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class ConfigError(RrmkitError, ValueError):
    """Experiment configuration file is invalid or carries unknown keys."""


class KpiUndefined(RrmkitError, ValueError):
    """A KPI was requested over an empty population.

    Callers that can tolerate missing KPIs should use the ``*_or_none``
    helpers instead of catching this.
    """
