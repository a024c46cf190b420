"""Progressive binarization training over real and fixed-point backends."""

__version__ = "0.1.0"

from .config import RunConfig
from .fxp import FxScalar, Q8_4, Q16_8, QFormat
from .tensor import Tensor

__all__ = [
    "__version__",
    "RunConfig",
    "QFormat",
    "FxScalar",
    "Q8_4",
    "Q16_8",
    "Tensor",
]
