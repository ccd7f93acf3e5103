"""Exception taxonomy shared by every module."""


class EitError(Exception):
    pass


class ContractError(EitError):
    """An operation was called with arguments that violate its contract."""


class GeometryError(EitError):
    """Convolution/pooling geometry cannot produce a valid output."""


class ConfigError(EitError):
    """Invalid or inconsistent model/train configuration."""


class DiagnosticError(EitError):
    """A probe was asked to measure something degenerate."""


class LoadError(EitError):
    """A dataset or checkpoint file is missing or malformed."""


class DivergenceError(EitError):
    """Training produced a non-finite loss."""
