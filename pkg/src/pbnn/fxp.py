"""Saturating signed fixed-point arithmetic in configurable Q-formats.

Two views of the same arithmetic live here:

* an exact scalar API (``FxScalar``, ``quantize``, ``fx_add``, ``fx_mul``,
  ``fx_dot``) built on arbitrary-precision Python integers, used as the
  reference semantics and by the property tests;
* vectorized helpers (``quantize_values``, ``raw_from_values``,
  ``values_from_raw``) that operate on float64 arrays holding exact
  multiples of the format resolution.  For the supported formats every
  product and accumulated sum the library forms is exactly representable
  in float64, so the vectorized path is bit-identical to wide-accumulator
  integer arithmetic while keeping BLAS speed.

Overflow always saturates (never wraps) and rounding is round-to-nearest
with ties to even, everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError

__all__ = [
    "QFormat",
    "FxScalar",
    "Q8_4",
    "Q16_8",
    "quantize",
    "fx_add",
    "fx_mul",
    "fx_dot",
    "quantize_values",
    "raw_from_values",
    "values_from_raw",
]


@dataclass(frozen=True)
class QFormat:
    """Signed two's-complement fixed-point format.

    ``total_bits`` includes the sign bit; ``frac_bits`` of them are
    fractional.  The representable range is
    ``[-2**(total_bits-1-frac_bits), 2**(total_bits-1-frac_bits) - 2**-frac_bits]``.
    """

    total_bits: int
    frac_bits: int

    def __post_init__(self):
        if self.total_bits not in (8, 16):
            raise ValueError(f"total_bits must be 8 or 16, got {self.total_bits}")
        if not 0 < self.frac_bits < self.total_bits:
            raise ValueError(
                f"frac_bits must be in (0, {self.total_bits}), got {self.frac_bits}"
            )

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def resolution(self) -> float:
        return 1.0 / self.scale

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def min_value(self) -> float:
        return self.raw_min / self.scale

    @property
    def max_value(self) -> float:
        return self.raw_max / self.scale

    def __str__(self) -> str:
        return f"Q{self.total_bits}.{self.frac_bits}"


Q8_4 = QFormat(8, 4)
Q16_8 = QFormat(16, 8)


@dataclass(frozen=True)
class FxScalar:
    """One fixed-point number: a raw two's-complement integer plus its format."""

    raw: int
    fmt: QFormat

    def __post_init__(self):
        if not self.fmt.raw_min <= self.raw <= self.fmt.raw_max:
            raise ValueError(f"raw {self.raw} outside {self.fmt} range")

    @property
    def value(self) -> float:
        return self.raw / self.fmt.scale

    def __float__(self) -> float:
        return self.value


def _saturate_raw(raw: int, fmt: QFormat) -> int:
    return min(max(raw, fmt.raw_min), fmt.raw_max)


def _shift_round_half_even(x: int, shift: int) -> int:
    """Divide ``x`` by ``2**shift`` rounding to nearest, ties to even.

    Exact on Python ints of any width; this is the single rounding
    primitive behind fx_mul/fx_dot.
    """
    if shift == 0:
        return x
    half = 1 << (shift - 1)
    q = x >> shift
    r = x & ((1 << shift) - 1)
    if r > half or (r == half and q & 1):
        q += 1
    return q


def _check_fmt(a: FxScalar, b: FxScalar) -> QFormat:
    if a.fmt != b.fmt:
        raise DimensionError(f"format mismatch: {a.fmt} vs {b.fmt}")
    return a.fmt


def quantize(x: float, fmt: QFormat) -> FxScalar:
    """Round ``x`` to the nearest representable value (ties to even), saturating."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot quantize non-finite value {x!r}")
    raw = int(np.rint(x * fmt.scale))
    return FxScalar(_saturate_raw(raw, fmt), fmt)


def fx_add(a: FxScalar, b: FxScalar) -> FxScalar:
    fmt = _check_fmt(a, b)
    return FxScalar(_saturate_raw(a.raw + b.raw, fmt), fmt)


def fx_mul(a: FxScalar, b: FxScalar) -> FxScalar:
    fmt = _check_fmt(a, b)
    raw = _shift_round_half_even(a.raw * b.raw, fmt.frac_bits)
    return FxScalar(_saturate_raw(raw, fmt), fmt)


def fx_dot(
    a: Sequence[FxScalar] | Iterable[FxScalar],
    b: Sequence[FxScalar] | Iterable[FxScalar],
    fmt: QFormat | None = None,
) -> FxScalar:
    """Dot product with a wide exact accumulator and one final re-quantization.

    Partial products and sums never saturate; only the final store rounds
    and saturates.  ``fmt`` is only needed to type the result of an empty
    dot product.
    """
    a = list(a)
    b = list(b)
    if len(a) != len(b):
        raise DimensionError(f"length mismatch: {len(a)} vs {len(b)}")
    if not a:
        if fmt is None:
            raise DimensionError("empty fx_dot needs an explicit fmt")
        return FxScalar(0, fmt)
    for x, y in zip(a, b):
        out_fmt = _check_fmt(x, y)
        if fmt is not None and out_fmt != fmt:
            raise DimensionError(f"format mismatch: {out_fmt} vs {fmt}")
    acc = sum(x.raw * y.raw for x, y in zip(a, b))
    raw = _shift_round_half_even(acc, out_fmt.frac_bits)
    return FxScalar(_saturate_raw(raw, out_fmt), out_fmt)


# --- vectorized value-domain helpers -------------------------------------

def quantize_values(x, fmt: QFormat) -> np.ndarray:
    """Vectorized quantize: float64 array of exactly representable values.

    Inputs that are already exact multiples of ``2**-2*frac_bits`` (e.g.
    accumulated products of on-grid values) are re-quantized identically
    to the integer reference because the float64 intermediates are exact.
    """
    raw = np.rint(np.asarray(x, dtype=np.float64) * fmt.scale)
    np.clip(raw, fmt.raw_min, fmt.raw_max, out=raw)
    return raw / fmt.scale


def raw_from_values(values, fmt: QFormat) -> np.ndarray:
    """Raw integers for on-grid value-domain arrays (checkpoint serialization)."""
    raw = np.rint(np.asarray(values, dtype=np.float64) * fmt.scale).astype(np.int64)
    if raw.size and (raw.min() < fmt.raw_min or raw.max() > fmt.raw_max):
        raise ValueError(f"values outside {fmt} range")
    return raw


def values_from_raw(raw, fmt: QFormat) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    return raw / fmt.scale
