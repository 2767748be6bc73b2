"""Attention modules for segmentation with exact tape-based gradients.

The package bundles a minimal dense-tensor autograd core, class- and
region-attention blocks with verified forward/backward math, a
symbolic complexity analyzer, a synthetic-scene trainer, and metrics,
all driven by the ``segattn`` command line tool.
"""

from .errors import (DivergenceError, EvaluationError, HmatFormatError,
                     LabelError, PartitionError, ShapeError)
from .gradcheck import grad_check
from .partition import PartitionSpec
from .tape import Tape
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "DivergenceError", "EvaluationError", "HmatFormatError", "LabelError",
    "PartitionError", "ShapeError", "grad_check", "PartitionSpec", "Tape",
    "Tensor", "__version__",
]
