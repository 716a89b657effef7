"""Exception taxonomy shared across the package."""


class TrajsieveError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(TrajsieveError):
    """Tensor shapes do not conform to an operation's requirements."""


class DomainError(TrajsieveError):
    """An input value is outside an operation's mathematical domain."""


class ContractError(TrajsieveError):
    """A caller violated a documented precondition."""


class ParseError(TrajsieveError):
    """A scene file line could not be parsed; message carries the line number."""


class EmptyInputError(TrajsieveError):
    """An input source yielded zero usable records."""


class ConfigError(TrajsieveError):
    """A configuration value is invalid or inconsistent."""


class CheckpointError(TrajsieveError):
    """A checkpoint file is malformed or inconsistent with its manifest."""


class TrainingDiverged(TrajsieveError):
    """Training produced a non-finite loss."""
