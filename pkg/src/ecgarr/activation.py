"""Activation functions: exact references plus piecewise-linear approximations.

The approximated tanh is a 13-segment piecewise-linear curve whose slopes are
all powers of two, so the fixed-point variant needs only arithmetic shifts and
constant adds. Segment offsets are pinned by exact continuity between
neighboring segments; that also places the saturation point exactly where the
outermost linear piece reaches 1: x = 4096 * (1 - 0.9986376953125) = 5.58.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .fixedpoint import (
    FixedPoint,
    QFormat,
    rne_shift,
    rne_shift_array,
    saturate,
    saturate_array,
    to_fixed,
)

# Positive-side segment borders, outermost first. Membership is
# upper-inclusive: a border belongs to the segment it closes from above,
# except the saturation border itself, which yields exactly 1.
SATURATION_BORDER = 5.58
_BORDERS = (SATURATION_BORDER, 3.02, 2.02, 1.475, 1.125, 0.5)
# Slopes 2**-s for the segments between consecutive borders, then identity.
_SHIFTS = (12, 5, 3, 2, 1, 0)
_OFFSETS = (0.9986376953125, 0.905, 0.715625, 0.53125, 0.25, 0.0)


@dataclass(frozen=True)
class PlaSegment:
    """One linear piece: value = x * 2**-shift + offset on (lower, upper]."""

    lower: float | None  # None = -inf
    upper: float | None  # None = +inf
    shift: int | None    # None = constant segment (saturation)
    offset: float


def _build_segments() -> tuple[PlaSegment, ...]:
    segs = [PlaSegment(SATURATION_BORDER, None, None, 1.0)]
    for i in range(5):
        segs.append(PlaSegment(_BORDERS[i + 1], _BORDERS[i], _SHIFTS[i], _OFFSETS[i]))
    segs.append(PlaSegment(-0.5, 0.5, 0, 0.0))
    for i in range(4, -1, -1):
        segs.append(PlaSegment(-_BORDERS[i], -_BORDERS[i + 1], _SHIFTS[i], -_OFFSETS[i]))
    segs.append(PlaSegment(None, -SATURATION_BORDER, None, -1.0))
    return tuple(segs)


@dataclass(frozen=True)
class PlaSegmentTable:
    """The 13 segments tiling the real line, outermost positive first."""

    segments: tuple[PlaSegment, ...]


PLA_TABLE = PlaSegmentTable(_build_segments())


def _apply(x, func_scalar_free):
    arr = np.asarray(x, dtype=float)
    out = func_scalar_free(arr)
    if arr.ndim == 0:
        return float(out)
    return out


def tanh_exact(x):
    """Reference hyperbolic tangent."""
    return _apply(x, np.tanh)


def softmax(z) -> np.ndarray:
    """Reference normalized exponential, stabilized by max subtraction."""
    z = np.asarray(z, dtype=float)
    if z.size < 1:
        raise ValueError("softmax needs at least one input")
    e = np.exp(z - np.max(z))
    return e / np.sum(e)


def _platanh_array(x: np.ndarray) -> np.ndarray:
    b = _BORDERS
    o = _OFFSETS
    conditions = [
        x >= b[0],
        x > b[1], x > b[2], x > b[3], x > b[4], x > b[5],
        x > -b[5],
        x > -b[4], x > -b[3], x > -b[2], x > -b[1], x > -b[0],
    ]
    choices = [
        np.ones_like(x),
        # Clamp the outer linear pieces: float rounding just below the
        # saturation border must not push the value past 1.
        np.minimum(1.0, x / 4096 + o[0]),
        x / 32 + o[1],
        x / 8 + o[2],
        x / 4 + o[3],
        x / 2 + o[4],
        x,
        x / 2 - o[4],
        x / 4 - o[3],
        x / 8 - o[2],
        x / 32 - o[1],
        np.maximum(-1.0, x / 4096 - o[0]),
    ]
    return np.select(conditions, choices, default=-1.0)


def platanh(x):
    """Piecewise-linear tanh approximation, output in [-1, 1]."""
    return _apply(x, _platanh_array)


def _platanh_derivative_array(x: np.ndarray) -> np.ndarray:
    # At a border the slope of the segment to its left applies.
    b = _BORDERS
    conditions = [
        x <= -b[0],
        x <= -b[1], x <= -b[2], x <= -b[3], x <= -b[4], x <= -b[5],
        x <= b[5],
        x <= b[4], x <= b[3], x <= b[2], x <= b[1], x <= b[0],
    ]
    slopes = [0.0,
              2.0 ** -12, 2.0 ** -5, 2.0 ** -3, 2.0 ** -2, 2.0 ** -1,
              1.0,
              2.0 ** -1, 2.0 ** -2, 2.0 ** -3, 2.0 ** -5, 2.0 ** -12]
    return np.select(conditions, slopes, default=0.0)


def platanh_derivative(x):
    """Slope of the piecewise-linear tanh at x (left-segment rule at borders)."""
    return _apply(x, _platanh_derivative_array)


def ntanh(x, approximate: bool = False):
    """Normalized tanh (tanh(x)+1)/2, mapping outputs into [0, 1]."""
    if approximate:
        return _apply(x, lambda a: (_platanh_array(a) + 1.0) / 2.0)
    return _apply(x, lambda a: (np.tanh(a) + 1.0) / 2.0)


def ntanh_derivative(x, approximate: bool = False):
    """Derivative of ntanh: half the (exact or approximated) tanh slope."""
    if approximate:
        return _apply(x, lambda a: _platanh_derivative_array(a) / 2.0)
    return _apply(x, lambda a: (1.0 - np.tanh(a) ** 2) / 2.0)


@dataclass(frozen=True)
class _FixedPlaTable:
    """Quantized borders and offsets for one Q-format (positive side)."""

    borders: tuple[int, ...]   # raw, descending
    offsets: tuple[int, ...]   # raw, same order as _SHIFTS[:5]
    one: int                   # raw representation of +1, saturated


@lru_cache(maxsize=None)
def _fixed_pla_table(fmt: QFormat) -> _FixedPlaTable:
    borders = tuple(to_fixed(b, fmt).raw for b in _BORDERS)
    offsets = tuple(to_fixed(o, fmt).raw for o in _OFFSETS[:5])
    return _FixedPlaTable(borders, offsets, to_fixed(1.0, fmt).raw)


def platanh_fixed_raw(raw: int, fmt: QFormat) -> int:
    """Fixed-point piecewise-linear tanh on a raw value, returning raw."""
    t = _fixed_pla_table(fmt)
    b, o, one = t.borders, t.offsets, t.one
    if raw >= b[0]:
        return one
    if raw > b[1]:
        y = rne_shift(raw, 12) + o[0]
    elif raw > b[2]:
        y = rne_shift(raw, 5) + o[1]
    elif raw > b[3]:
        y = rne_shift(raw, 3) + o[2]
    elif raw > b[4]:
        y = rne_shift(raw, 2) + o[3]
    elif raw > b[5]:
        y = rne_shift(raw, 1) + o[4]
    elif raw > -b[5]:
        y = raw
    elif raw > -b[4]:
        y = rne_shift(raw, 1) - o[4]
    elif raw > -b[3]:
        y = rne_shift(raw, 2) - o[3]
    elif raw > -b[2]:
        y = rne_shift(raw, 3) - o[2]
    elif raw > -b[1]:
        y = rne_shift(raw, 5) - o[1]
    elif raw > -b[0]:
        y = rne_shift(raw, 12) - o[0]
    else:
        return -one
    y = min(one, max(-one, y))
    return saturate(y, fmt)


def platanh_fixed(x: FixedPoint) -> FixedPoint:
    """Fixed-point piecewise-linear tanh; saturates to [-1, 1] in Q-format."""
    return FixedPoint(platanh_fixed_raw(x.raw, x.fmt), x.fmt)


def ntanh_fixed_raw(raw: int, fmt: QFormat) -> int:
    """Fixed-point normalized tanh: (platanh(x) + 1) / 2 on raw values."""
    one = _fixed_pla_table(fmt).one
    return saturate(rne_shift(platanh_fixed_raw(raw, fmt) + one, 1), fmt)


def ntanh_fixed(x: FixedPoint) -> FixedPoint:
    return FixedPoint(ntanh_fixed_raw(x.raw, x.fmt), x.fmt)


# ---------------------------------------------------------------------------
# vectorized raw paths (int64 arrays), elementwise-identical to the
# scalar functions above


def platanh_fixed_raw_array(raw, fmt: QFormat):
    r = np.asarray(raw, dtype=np.int64)
    t = _fixed_pla_table(fmt)
    b, o, one = t.borders, t.offsets, t.one
    conds = [
        r >= b[0],
        r > b[1], r > b[2], r > b[3], r > b[4], r > b[5],
        r > -b[5],
        r > -b[4], r > -b[3], r > -b[2], r > -b[1], r > -b[0],
    ]
    choices = [
        np.full_like(r, one),
        rne_shift_array(r, 12) + o[0],
        rne_shift_array(r, 5) + o[1],
        rne_shift_array(r, 3) + o[2],
        rne_shift_array(r, 2) + o[3],
        rne_shift_array(r, 1) + o[4],
        r,
        rne_shift_array(r, 1) - o[4],
        rne_shift_array(r, 2) - o[3],
        rne_shift_array(r, 3) - o[2],
        rne_shift_array(r, 5) - o[1],
        rne_shift_array(r, 12) - o[0],
    ]
    y = np.select(conds, choices, default=-one)
    return saturate_array(np.clip(y, -one, one), fmt)


def ntanh_fixed_raw_array(raw, fmt: QFormat):
    one = _fixed_pla_table(fmt).one
    y = rne_shift_array(platanh_fixed_raw_array(raw, fmt) + one, 1)
    return saturate_array(y, fmt)
