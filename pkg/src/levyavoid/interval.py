"""Closed intervals with outward rounding, used for envelope-mode quantities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _down(x):
    return np.nextafter(x, -np.inf)


def _up(x):
    return np.nextafter(x, np.inf)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @classmethod
    def point(cls, x):
        return cls(float(x), float(x))

    @property
    def width(self):
        return self.hi - self.lo

    def contains(self, x, rtol=0.0):
        slack = rtol * max(abs(self.lo), abs(self.hi))
        return self.lo - slack <= x <= self.hi + slack

    def __add__(self, other):
        other = _coerce(other)
        return Interval(float(_down(self.lo + other.lo)), float(_up(self.hi + other.hi)))

    def __mul__(self, other):
        """Product of nonnegative intervals."""
        other = _coerce(other)
        if self.lo < 0 or other.lo < 0:
            raise ValueError("only nonnegative intervals can be multiplied")
        return Interval(float(_down(self.lo * other.lo)), float(_up(self.hi * other.hi)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        """Quotient of nonnegative intervals; the divisor must be positive."""
        other = _coerce(other)
        if self.lo < 0 or other.lo <= 0:
            raise ValueError("division needs a nonnegative numerator and positive divisor")
        return Interval(float(_down(self.lo / other.hi)), float(_up(self.hi / other.lo)))

    def clip(self, lo, hi):
        return Interval(min(max(self.lo, lo), hi), min(max(self.hi, lo), hi))

    def as_list(self):
        return [self.lo, self.hi]


def _coerce(x):
    if isinstance(x, Interval):
        return x
    return Interval.point(x)
