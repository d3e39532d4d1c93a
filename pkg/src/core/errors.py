"""
Exception hierarchy shared by every module.

Each class names one kind of rejection so that the CLI can map it to an exit
status and a one-line diagnostic.
"""
from typing import Optional


class F2ATError(Exception):
    """Base class for every rejection raised by the lab."""


class ShapeError(F2ATError, ValueError):
    """Operand shapes are incompatible with an operation's shape rule."""


class UnknownPrimitiveError(F2ATError, KeyError):
    """A primitive id is not registered."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown primitive"


class DomainError(F2ATError, ValueError):
    """A value lies outside the documented domain of an operation."""


class NonFiniteError(F2ATError, ArithmeticError):
    """A NaN or infinity appeared where finite values are required."""


class ConfigError(F2ATError, ValueError):
    """A configuration value, flag or file entry is invalid."""


class FormatError(F2ATError, ValueError):
    """A file does not follow its declared binary or text layout."""

    def __init__(self, message: str, offset: Optional[int] = None):
        """
        Initialize a format error.

        Args:
            message (str): What was wrong
            offset (int, optional): Byte offset where parsing failed
        """
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class TrainingAborted(NonFiniteError):
    """A training run met a non-finite loss; carries where it happened."""

    def __init__(self, epoch: int, batch: int, detail: str):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"training aborted at epoch {epoch}, batch {batch}: {detail}")
