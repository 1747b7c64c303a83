"""
Exception hierarchy for the toolkit.
All errors derive from ValueError so existing `except ValueError` callers keep working.
"""

from pathlib import Path
from typing import Union


class KGNSFError(ValueError):
    """Base class for data and runtime errors (CLI exit code 1)"""


class DatasetError(KGNSFError):
    """Empty splits, out-of-range ids, unusable dataset files"""


class TripleParseError(DatasetError):
    """Malformed line in a triple file"""

    def __init__(self, path: Union[str, Path], line_number: int, reason: str):
        self.path = str(path)
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"{self.path}:{line_number}: {reason}")


class ShapeError(KGNSFError):
    """Mismatched matrix shapes or empty batches"""


class NonFiniteGradientError(KGNSFError):
    """A gradient entry is NaN or infinite"""

    def __init__(self, block: str):
        self.block = block
        super().__init__(f"Non-finite gradient in parameter block '{block}'")


class CheckpointError(KGNSFError):
    """Unreadable checkpoint or checkpoint/KG mismatch"""

    def __init__(self, path: Union[str, Path], reason: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {reason}")


class RunDirError(KGNSFError):
    """Run directory exists and overwrite was not requested"""


class TrainingError(KGNSFError):
    """Failure inside the training loop, with epoch context"""

    def __init__(self, epoch: int, reason: str):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {reason}")


class IdRangeError(KGNSFError):
    """Entity or relation id outside the table it indexes"""
