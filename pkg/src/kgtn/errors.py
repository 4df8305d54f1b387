"""Exception types shared across the package."""


class KgtnError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(KgtnError, ValueError):
    """Operands have incompatible shapes; message names both."""


class DomainError(KgtnError, ValueError):
    """Input lies outside an operation's documented domain."""


class ContractError(KgtnError, ValueError):
    """A caller violated an operation's contract (not a data issue)."""


class DataFormatError(KgtnError, ValueError):
    """A data file is malformed; message carries the line number."""


class ConfigError(KgtnError, ValueError):
    """An experiment configuration value or key is invalid."""


class CheckpointError(KgtnError, ValueError):
    """A checkpoint file is corrupt or has the wrong version/magic."""


class TrainingDiverged(KgtnError, RuntimeError):
    """Loss or gradients became non-finite; carries the last good parameters."""

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good
