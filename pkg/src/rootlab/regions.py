"""Planar region descriptors.

Regions classify points (inside / outside with a signed margin), expose a
Lebesgue area when one exists, and can produce boundary grids.  They are
immutable value objects used for root bookkeeping, truncation certificates,
and area-based baselines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedRegion

__all__ = [
    "Region", "Disk", "Annulus", "Strip", "Segment", "PointRegion",
    "AngularSquare", "WholePlane", "EmptyRegion",
]


class Region:
    """Base class. Subclasses implement signed_distance (> 0 strictly inside)."""

    def signed_distance(self, z: complex) -> float:
        raise NotImplementedError

    def contains(self, z: complex) -> bool:
        return self.signed_distance(z) >= 0.0

    def strictly_contains(self, z: complex, margin: float = 1e-12) -> bool:
        return self.signed_distance(z) > margin

    @property
    def area(self) -> float:
        raise UnsupportedRegion(f"{type(self).__name__} has no computable area")

    def boundary_points(self, n: int) -> np.ndarray:
        raise UnsupportedRegion(f"{type(self).__name__} has no boundary grid")

    def covers(self, other: "Region") -> bool:
        """Conservative containment test for the descriptor pairs we use."""
        raise UnsupportedRegion(
            f"covers() not defined for {type(self).__name__} / {type(other).__name__}")

    def is_empty(self) -> bool:
        return False


@dataclass(frozen=True)
class Disk(Region):
    center: complex
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be non-negative")

    def signed_distance(self, z):
        return self.radius - abs(z - self.center)

    @property
    def area(self):
        return math.pi * self.radius ** 2

    def boundary_points(self, n):
        th = 2.0 * np.pi * np.arange(n) / n
        return self.center + self.radius * np.exp(1j * th)

    def covers(self, other):
        if isinstance(other, Disk):
            return abs(other.center - self.center) + other.radius <= self.radius + 1e-12
        if isinstance(other, PointRegion):
            return self.contains(other.point)
        if isinstance(other, Segment):
            return self.contains(other.lo) and self.contains(other.hi)
        if isinstance(other, EmptyRegion):
            return True
        return super().covers(other)

    def is_empty(self):
        return self.radius == 0.0


@dataclass(frozen=True)
class Annulus(Region):
    center: complex
    inner: float
    outer: float

    def __post_init__(self):
        if not (0 <= self.inner <= self.outer):
            raise ValueError("need 0 <= inner <= outer")

    def signed_distance(self, z):
        r = abs(z - self.center)
        return min(self.outer - r, r - self.inner)

    @property
    def area(self):
        return math.pi * (self.outer ** 2 - self.inner ** 2)

    def boundary_points(self, n):
        half = max(n // 2, 1)
        th = 2.0 * np.pi * np.arange(half) / half
        ring = np.exp(1j * th)
        return np.concatenate([self.center + self.outer * ring,
                               self.center + self.inner * ring])

    def covers(self, other):
        if isinstance(other, (Disk, PointRegion, Segment, Annulus)):
            pts = _probe_points(other)
            return all(self.contains(p) for p in pts)
        if isinstance(other, EmptyRegion):
            return True
        return super().covers(other)


@dataclass(frozen=True)
class Strip(Region):
    """Axis-aligned strip: Re z in [lo, hi], |Im z| <= height."""
    lo: float
    hi: float
    height: float

    def __post_init__(self):
        if self.hi < self.lo or self.height < 0:
            raise ValueError("need lo <= hi and height >= 0")

    def signed_distance(self, z):
        return min(z.real - self.lo, self.hi - z.real, self.height - abs(z.imag))

    @property
    def area(self):
        return (self.hi - self.lo) * 2.0 * self.height

    def covers(self, other):
        if isinstance(other, Segment):
            return self.lo - 1e-12 <= other.lo and other.hi <= self.hi + 1e-12
        if isinstance(other, Disk):
            c, r = other.center, other.radius
            return (self.lo <= c.real - r and c.real + r <= self.hi
                    and abs(c.imag) + r <= self.height)
        if isinstance(other, PointRegion):
            return self.contains(other.point)
        if isinstance(other, EmptyRegion):
            return True
        return super().covers(other)


@dataclass(frozen=True)
class Segment(Region):
    """Closed real interval [lo, hi], seen as a degenerate strip."""
    lo: float
    hi: float

    def __post_init__(self):
        if self.hi < self.lo:
            raise ValueError("need lo <= hi")

    def signed_distance(self, z):
        if z.imag != 0.0:
            return -abs(z.imag)
        return min(z.real - self.lo, self.hi - z.real)

    def covers(self, other):
        if isinstance(other, Segment):
            return self.lo - 1e-12 <= other.lo and other.hi <= self.hi + 1e-12
        if isinstance(other, PointRegion):
            return self.contains(other.point)
        if isinstance(other, EmptyRegion):
            return True
        return super().covers(other)


@dataclass(frozen=True)
class PointRegion(Region):
    point: complex

    def signed_distance(self, z):
        return 0.0 if z == self.point else -abs(z - self.point)

    @property
    def area(self):
        return 0.0

    def covers(self, other):
        if isinstance(other, PointRegion):
            return other.point == self.point
        if isinstance(other, EmptyRegion):
            return True
        return super().covers(other)


@dataclass(frozen=True)
class AngularSquare(Region):
    """Polar box {R e^{i theta}: R in [r0, r1], theta in [t0, t1]}."""
    r0: float
    r1: float
    t0: float
    t1: float

    def __post_init__(self):
        if not (0 <= self.r0 <= self.r1) or self.t1 < self.t0:
            raise ValueError("need 0 <= r0 <= r1 and t0 <= t1")

    def signed_distance(self, z):
        r = abs(z)
        th = math.atan2(z.imag, z.real)
        # wrap theta near the box
        while th < self.t0 - math.pi:
            th += 2 * math.pi
        while th > self.t1 + math.pi:
            th -= 2 * math.pi
        dr = min(r - self.r0, self.r1 - r)
        dth = min(th - self.t0, self.t1 - th) * max(r, 1e-300)
        return min(dr, dth)

    @property
    def area(self):
        return 0.5 * (self.r1 ** 2 - self.r0 ** 2) * (self.t1 - self.t0)


@dataclass(frozen=True)
class WholePlane(Region):
    def signed_distance(self, z):
        return math.inf

    def covers(self, other):
        return True


@dataclass(frozen=True)
class EmptyRegion(Region):
    def signed_distance(self, z):
        return -math.inf

    @property
    def area(self):
        return 0.0

    def is_empty(self):
        return True

    def covers(self, other):
        return isinstance(other, EmptyRegion)


def _probe_points(region) -> list[complex]:
    """A few extremal points sufficient for conservative containment checks."""
    if isinstance(region, PointRegion):
        return [region.point]
    if isinstance(region, Segment):
        return [complex(region.lo), complex(region.hi)]
    if isinstance(region, Disk):
        c, r = region.center, region.radius
        return [c + r, c - r, c + 1j * r, c - 1j * r]
    if isinstance(region, Annulus):
        pts = []
        for rad in (region.inner, region.outer):
            pts += [region.center + rad, region.center - rad,
                    region.center + 1j * rad, region.center - 1j * rad]
        return pts
    raise UnsupportedRegion(f"no probe points for {type(region).__name__}")
