"""
Exceptions for synth-eval
Every error carries the CLI exit code it maps to.
"""

from typing import List, Optional, Sequence


class SynthEvalError(Exception):
    """Base class for all synth-eval errors."""
    exit_code = 2


class InputError(SynthEvalError):
    """Bad input data, files, or parameters (exit code 1)."""
    exit_code = 1


class InvariantViolation(SynthEvalError):
    """An internal consistency check failed (exit code 2)."""
    exit_code = 2


# ============ I/O and formats ============

class FormatError(InputError):
    """Malformed file content."""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class UnsupportedDatatype(InputError):
    """NIfTI datatype outside the supported uint8/int16/float32 subset."""

    def __init__(self, code: int):
        self.code = code
        super().__init__(f"Unsupported NIfTI datatype code {code}; expected one of 2, 4, 16")


class DimensionError(InputError):
    """Volume is not three-dimensional."""


class IoError(InputError):
    """A path could not be read or written."""


class DuplicateItem(InputError):
    """Two embedding items share (subject_id, slice_index, modality)."""


class ConfigError(InputError):
    """Invalid configuration file or value."""


class PairingError(InputError):
    """Reference and synthesized inputs could not be paired."""

    def __init__(self, orphans: Sequence[str]):
        self.orphans: List[str] = sorted(orphans)
        super().__init__("Unpaired inputs: " + ", ".join(self.orphans))


# ============ Numerical preconditions ============

class DimError(InputError):
    """Operand shapes do not match."""


class ParamError(InputError):
    """Parameter outside its allowed range."""


class DegenerateVector(InputError):
    """A vector with zero norm where a direction is required."""


class DegenerateIntensity(InputError):
    """Constant image where a min-max range is required."""


class UndefinedDice(InputError):
    """Both masks are empty."""


class UndefinedAccuracy(InputError):
    """No samples to compute accuracy over."""


class NoPositiveError(InputError):
    """An InfoNCE anchor has no positive partner in the batch."""

    def __init__(self, anchor: str):
        self.anchor = anchor
        super().__init__(f"Anchor {anchor} has no positive (same subject and slice, other modality)")


class BatchTooSmall(InputError):
    """Contrastive batch needs at least two items."""


class MissingPrototype(InputError):
    """A modality present in the batch has no classifier prototype."""
