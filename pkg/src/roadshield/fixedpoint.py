"""Integer significand representation of continuous quantities.

A real value is stored as ``significand * base**exponent`` with one global
scale per run.  ``to_fixed`` truncates toward zero, which is the loss a
digital controller actually suffers; ``to_real`` is exact for the exponent
magnitudes allowed here.

The only subtlety is the interaction of truncation with float noise: the
quotient ``x / scale`` is computed in binary64, so a value that is exactly
``n * scale`` can come out a hair below ``n`` and naive truncation would
return ``n - 1``.  ``to_fixed`` therefore snaps quotients within a tiny
relative tolerance of an integer onto that integer before truncating, which
makes the round trip ``to_fixed(to_real(n)) == n`` exact for every in-range
significand while leaving genuine truncation (values visibly between grid
points) untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .errors import ScenarioError, FixedPointRangeError

# Relative half-width of the snap band around integer quotients; covers the
# <= 3 ulp of noise a multiply/divide by an exact power of the base can add.
SNAP_TOL = 1e-12

# Default signed width of the significand.  The width used in the original
# experiments is not documented anywhere, so the artifact defaults to the
# symmetric range of a 32-bit signed integer.
DEFAULT_SIGNIFICAND_BITS = 32


class FixedPointValue(NamedTuple):
    """A quantized value; the scale lives in the ambient :class:`ScaleConfig`."""

    significand: int


@dataclass(frozen=True)
class ScaleConfig:
    """Global fixed-point scale: values are ``significand * base**exponent``."""

    base: int = 10
    exponent: int = -4
    significand_bits: int = DEFAULT_SIGNIFICAND_BITS

    def __post_init__(self):
        if self.base < 2:
            raise ScenarioError("base must be >= 2", field="scale.base")
        if not 2 <= self.significand_bits <= 62:
            raise ScenarioError(
                "significand_bits must be in [2, 62]", field="scale.significand_bits"
            )
        # base**|exponent| must be exact in binary64 so both conversion
        # directions are a single correctly-rounded operation.
        if abs(self.exponent) * math.log2(self.base) > 52:
            raise ScenarioError(
                "base**|exponent| must fit in a binary64 significand",
                field="scale.exponent",
            )

    @property
    def scale(self) -> float:
        """The real value of one significand unit."""
        p = float(self.base ** abs(self.exponent))
        return 1.0 / p if self.exponent < 0 else p

    @property
    def max_significand(self) -> int:
        return (1 << (self.significand_bits - 1)) - 1

    # (mul, div) pairs so that both conversions are one multiply and one
    # divide by exactly representable integers (see module docstring).
    @property
    def to_real_mul_div(self) -> tuple[float, float]:
        p = float(self.base ** abs(self.exponent))
        return (1.0, p) if self.exponent < 0 else (p, 1.0)

    @property
    def to_fixed_mul_div(self) -> tuple[float, float]:
        p = float(self.base ** abs(self.exponent))
        return (p, 1.0) if self.exponent < 0 else (1.0, p)


def _significand(v) -> int:
    return v.significand if isinstance(v, FixedPointValue) else int(v)


def to_real(v: FixedPointValue | int, s: ScaleConfig) -> float:
    """Exact real value of ``v``: ``significand * base**exponent``."""
    n = _significand(v)
    if abs(n) > s.max_significand:
        raise FixedPointRangeError(
            f"significand {n} exceeds width {s.significand_bits}"
        )
    mul, div = s.to_real_mul_div
    return n * mul / div


def to_fixed(x: float, s: ScaleConfig) -> FixedPointValue:
    """Quantize ``x``: truncate ``x / scale`` toward zero (snap-corrected)."""
    x = float(x)
    if not math.isfinite(x):
        raise FixedPointRangeError(f"cannot quantize non-finite value {x!r}")
    mul, div = s.to_fixed_mul_div
    q = x * mul / div
    nearest = math.floor(q + 0.5)
    if abs(q - nearest) <= SNAP_TOL * max(1.0, abs(q)):
        n = int(nearest)
    else:
        n = int(q)
    if abs(n) > s.max_significand:
        raise FixedPointRangeError(
            f"value {x!r} quantizes to significand {n}, outside width "
            f"{s.significand_bits} (|n| <= {s.max_significand})"
        )
    return FixedPointValue(n)


def quantize(x: float, s: ScaleConfig) -> int:
    """``to_fixed`` returning the bare significand."""
    return to_fixed(x, s).significand
