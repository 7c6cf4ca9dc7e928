# src/utils/errors.py
from typing import Optional


class PipelineError(Exception):
    """Base class for every error raised deliberately by the ranking pipeline."""


class FormatError(PipelineError, ValueError):
    """A line of an input file could not be parsed."""

    def __init__(self, path, line_number: int, message: str):
        self.path = str(path)
        self.line_number = line_number
        super().__init__(f"{self.path}:{line_number}: {message}")


class DuplicateIdError(PipelineError, ValueError):
    """An identifier that must be unique was seen twice."""

    def __init__(self, kind: str, identifier: str, path: Optional[str] = None):
        self.identifier = identifier
        location = f" in {path}" if path else ""
        super().__init__(f"duplicate {kind} '{identifier}'{location}")


class UnknownIdError(PipelineError, KeyError):
    """A side file references an id that is not part of the corpus."""

    def __init__(self, kind: str, identifier: str):
        self.identifier = identifier
        super().__init__(f"unknown {kind} '{identifier}'")

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the message readable.
        return self.args[0]


class DimensionMismatchError(PipelineError, ValueError):
    """A vector does not have the dimension its container expects."""


class NonFiniteLossError(PipelineError, ArithmeticError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, epoch: int, batch: int, value: float):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")


class StageError(PipelineError, RuntimeError):
    """An enabled pipeline stage is missing one of its prerequisites."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"stage '{stage}': {message}")
