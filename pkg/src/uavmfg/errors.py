"""Exception hierarchy shared by the solver modules."""

from __future__ import annotations


class UavMfgError(Exception):
    """Base class for all package errors."""


class ConfigError(UavMfgError):
    """A scenario document could not be turned into a valid configuration."""

    def __init__(self, message: str, path: str = "") -> None:
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class MalformedDocument(ConfigError):
    pass


class UnknownKey(ConfigError):
    pass


class TypeMismatch(ConfigError):
    pass


class MissingRequired(ConfigError):
    pass


class InvalidValue(ConfigError):
    """Well-typed value that violates a scenario invariant."""


class GeometryError(UavMfgError):
    pass


class NoTargetCell(GeometryError):
    pass


class NoFreeCell(GeometryError):
    pass


class EmptySourceRegion(UavMfgError):
    pass


class NonFiniteLoss(UavMfgError):
    def __init__(self, epoch: int, loss: float) -> None:
        super().__init__(f"non-finite PINN loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class EmptyCollocation(UavMfgError):
    pass


class IoFailure(UavMfgError):
    def __init__(self, path, reason: str = "") -> None:
        super().__init__(f"I/O failure on {path}" + (f": {reason}" if reason else ""))
        self.path = path


class FormatVersionMismatch(UavMfgError):
    pass
