"""Row-major N-dimensional arrays over a real or fixed-point scalar backend.

``Tensor`` tags a numpy array with its scalar backend: ``fmt=None`` is the
float32 reference backend, ``fmt=QFormat(...)`` is simulated fixed point
(data stored in the value domain, see :mod:`pbnn.fxp`).  The array-level
kernels (``im2col_array``, ``col2im_array``, ``matmul_values``) are shared
with the layer implementations, which pass bare arrays on the hot path.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, GeometryError
from .fxp import QFormat, quantize_values

__all__ = [
    "Tensor",
    "real",
    "fixed",
    "store",
    "matmul",
    "im2col",
    "im2col_array",
    "col2im_array",
    "conv_output_extent",
]

# Exactness bound for the float64 fixed-point accumulator: raw products fit
# in 2*(total_bits-1) <= 30 bits, so sums of up to 2^20 terms stay exact.
_MAX_EXACT_DOT_LENGTH = 1 << 20


class Tensor:
    """Immutable-by-convention array plus scalar backend tag."""

    __slots__ = ("data", "fmt")

    def __init__(self, data: np.ndarray, fmt: QFormat | None = None):
        self.data = np.ascontiguousarray(data)
        self.fmt = fmt

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def backend(self) -> str:
        return "real32" if self.fmt is None else f"fixed:{self.fmt}"

    def to_numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, backend={self.backend})"


def real(values, dtype=np.float32) -> Tensor:
    """Tensor on the real reference backend."""
    return Tensor(np.asarray(values, dtype=dtype), None)


def fixed(values, fmt: QFormat) -> Tensor:
    """Tensor on the fixed-point backend (values quantized on construction)."""
    return Tensor(quantize_values(values, fmt), fmt)


def store(values, fmt: QFormat | None, dtype=np.float32) -> np.ndarray:
    """Write an array into a backend's storage domain.

    Fixed backends round-to-nearest-even and saturate; the real backend
    casts.  ``dtype`` only applies to the real backend (float64 is used by
    the gradient-check paths).
    """
    if fmt is None:
        return np.asarray(values, dtype=dtype)
    return quantize_values(values, fmt)


def _check_same_backend(a: Tensor, b: Tensor) -> QFormat | None:
    if a.fmt != b.fmt:
        raise DimensionError(f"backend mismatch: {a.backend} vs {b.backend}")
    return a.fmt


def matmul_values(a: np.ndarray, b: np.ndarray, fmt: QFormat | None) -> np.ndarray:
    """Matrix product in a backend's semantics, on bare value arrays.

    Fixed backend: operands are on-grid, the float64 product accumulates
    exactly (wide-accumulator semantics, no intermediate saturation) and a
    single final re-quantization stores the result.
    """
    if fmt is None:
        return a @ b
    if a.shape[-1] > _MAX_EXACT_DOT_LENGTH:
        raise DimensionError(
            f"fixed-point dot length {a.shape[-1]} exceeds exactness bound"
        )
    return quantize_values(np.asarray(a, np.float64) @ np.asarray(b, np.float64), fmt)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for 2-D tensors (or matrix-vector) on a shared backend."""
    fmt = _check_same_backend(a, b)
    if a.ndim != 2 or b.ndim not in (1, 2):
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return Tensor(matmul_values(a.data, b.data, fmt), fmt)


def conv_output_extent(extent: int, kernel: int, stride: int, padding: int) -> int:
    """Output extent of a strided convolution; raises unless it is integral."""
    span = extent + 2 * padding - kernel
    if span < 0 or span % stride != 0:
        raise GeometryError(
            f"extent {extent} with k={kernel}, s={stride}, p={padding} "
            "gives no integral output extent"
        )
    return span // stride + 1


def im2col_array(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    """Patch-extraction matrix for convolution-as-matmul.

    ``x`` is ``(C, H, W)`` or ``(B, C, H, W)``.  Output rows run over
    ``(c, ki, kj)`` row-major; columns over ``(b, h_out, w_out)`` row-major,
    so ``weights.reshape(F, C*k*k) @ cols`` is the convolution.
    """
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if x.ndim != 4:
        raise DimensionError(f"im2col expects (C,H,W) or (B,C,H,W), got {x.shape}")
    batch, chans, h, w = x.shape
    h_out = conv_output_extent(h, kernel, stride, padding)
    w_out = conv_output_extent(w, kernel, stride, padding)

    if padding:
        xp = np.zeros((batch, chans, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
        xp[:, :, padding : padding + h, padding : padding + w] = x
    else:
        xp = x
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]  # (B, C, Ho, Wo, k, k)
    cols = windows.transpose(1, 4, 5, 0, 2, 3).reshape(
        chans * kernel * kernel, batch * h_out * w_out
    )
    return np.ascontiguousarray(cols)


def col2im_array(
    cols: np.ndarray,
    input_shape: tuple[int, ...],
    kernel: int,
    stride: int,
    padding: int,
) -> np.ndarray:
    """Scatter-add adjoint of :func:`im2col_array` (gradient w.r.t. the input)."""
    batch, chans, h, w = input_shape
    h_out = conv_output_extent(h, kernel, stride, padding)
    w_out = conv_output_extent(w, kernel, stride, padding)
    patches = cols.reshape(chans, kernel, kernel, batch, h_out, w_out)
    gpad = np.zeros(
        (batch, chans, h + 2 * padding, w + 2 * padding), dtype=cols.dtype
    )
    for ki in range(kernel):
        for kj in range(kernel):
            gpad[
                :, :, ki : ki + stride * h_out : stride, kj : kj + stride * w_out : stride
            ] += patches[:, ki, kj].transpose(1, 0, 2, 3)
    if padding:
        return gpad[:, :, padding : padding + h, padding : padding + w].copy()
    return gpad


def im2col(x: Tensor, kernel: int, stride: int, padding: int) -> Tensor:
    """Spec-surface im2col on a single ``(C, H, W)`` tensor."""
    if x.ndim != 3:
        raise DimensionError(f"im2col expects a (C,H,W) tensor, got {x.shape}")
    return Tensor(im2col_array(x.data, kernel, stride, padding), x.fmt)
