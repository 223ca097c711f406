"""Exception types shared across the package."""

from __future__ import annotations


class BFMDError(Exception):
    """Base class for domain failures (CLI exit code 1)."""


class MalformedDocument(BFMDError):
    pass


class SchemaViolation(BFMDError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '/'}: {message}")
        self.path = path
        self.message = message


class EmptyCollection(BFMDError):
    pass


class InvalidParameter(BFMDError):
    pass


class DegenerateBox(BFMDError):
    pass


class ModalityGap(BFMDError):
    pass


class InvalidRatios(BFMDError):
    pass


class ShapeMismatch(BFMDError):
    pass


class SequenceTooLong(BFMDError):
    pass


class AllPadded(BFMDError):
    pass


class NonFiniteLoss(BFMDError):
    pass


class EmptyCorpus(BFMDError):
    pass


class CorpusTooSmall(BFMDError):
    pass


class CheckpointError(BFMDError):
    pass
