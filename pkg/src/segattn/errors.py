"""Exception types shared across the package.

The CLI maps these onto its exit codes, so new error paths should reuse
one of the classes below instead of raising bare ValueError.
"""


class ShapeError(ValueError):
    """Operands have incompatible dimensions for the requested op."""


class PartitionError(ValueError):
    """Region geometry does not divide the spatial extent evenly."""


class LabelError(ValueError):
    """A label map contains class ids outside [0, num_classes)."""


class HmatFormatError(ValueError):
    """A tensor file is malformed; ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class EvaluationError(RuntimeError):
    """A checked computation produced a non-finite value."""
