"""Uniform quantizer with synchronized subtractive dither.

The quantizer rounds each component to the nearest multiple of Delta with
half-open cells [k*Delta - Delta/2, k*Delta + Delta/2).  The dither stream
is counter-based: each value is a pure function of (seed, t, component),
so the two ends of the channel regenerate identical dither without any
shared mutable state.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._rng import counter_centered
from .errors import BadParameter, DimensionMismatch, NonFinite


@dataclass(frozen=True)
class LatticePoint:
    """A point k of the scaled integer lattice; its value is coords*Delta."""

    coords: tuple
    Delta: float

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(int(c) for c in self.coords))
        if not (self.Delta > 0.0) or not math.isfinite(self.Delta):
            raise BadParameter(f"Delta must be positive and finite, got {self.Delta}")

    @property
    def m(self) -> int:
        return len(self.coords)

    def value(self) -> np.ndarray:
        return np.array([c * self.Delta for c in self.coords])


@dataclass(frozen=True)
class DitherStream:
    seed: int
    Delta: float
    m: int

    def __post_init__(self):
        if not (0 <= self.seed < 2**64):
            raise BadParameter("seed must be a 64-bit unsigned integer")
        if not (self.Delta > 0.0) or not math.isfinite(self.Delta):
            raise BadParameter(f"Delta must be positive and finite, got {self.Delta}")
        if self.m <= 0:
            raise BadParameter("m must be positive")


def quantize(x, Delta: float) -> LatticePoint:
    """Nearest lattice point, ties at cell edges resolved upward.

    floor(x/Delta + 0.5) realizes the half-open cell convention: the right
    endpoint k*Delta + Delta/2 belongs to cell k+1.
    """
    if not (Delta > 0.0) or not math.isfinite(Delta):
        raise BadParameter(f"Delta must be positive and finite, got {Delta}")
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(arr)):
        raise NonFinite("quantize input contains NaN or infinity")
    coords = tuple(int(math.floor(v / Delta + 0.5)) for v in arr)
    return LatticePoint(coords=coords, Delta=Delta)


def dither_at(stream: DitherStream, t: int) -> np.ndarray:
    """Dither vector for step t, uniform on [-Delta/2, Delta/2) per component.

    Component-major order with one 64-bit draw per component; bit-identical
    across calls and call orders.
    """
    if t < 0:
        raise BadParameter(f"t must be nonnegative, got {t}")
    return np.array(
        [counter_centered(stream.seed, t, i, stream.Delta) for i in range(stream.m)]
    )


def reconstruct(q: LatticePoint, d) -> np.ndarray:
    """Subtractive-dither reconstruction q*Delta - d."""
    d = np.asarray(d, dtype=float)
    if d.shape != (q.m,):
        raise DimensionMismatch(f"dither has shape {d.shape}, expected ({q.m},)")
    return np.array([q.coords[i] * q.Delta - d[i] for i in range(q.m)])
