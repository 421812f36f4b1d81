"""Geometric predicates used for domains and for clipping jump supports.

All regions are closed sets; ``contains`` takes an ``(n, d)`` array of points
and returns a boolean mask.  ``contains_open`` tests the interior, which is
what the interior node set ``D`` is sampled from.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

_EPS = 1e-12


def _as_points(points, dim=None):
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None] if dim in (None, 1) else pts[None, :]
    return pts


def _merge(intervals):
    out = []
    for lo, hi in sorted(i for i in intervals if i[1] > i[0]):
        if out and lo <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


def intersect_intervals(a, b):
    """Intersection of two sorted, disjoint interval lists."""
    out = []
    for lo1, hi1 in a:
        for lo2, hi2 in b:
            lo, hi = max(lo1, lo2), min(hi1, hi2)
            if hi > lo:
                out.append((lo, hi))
    return _merge(out)


class Region:
    """Base class; subclasses are immutable dataclasses."""

    def contains(self, points) -> np.ndarray:
        raise NotImplementedError

    def contains_open(self, points) -> np.ndarray:
        return self.contains(points)

    def shifted(self, offset) -> "Region":
        raise NotImplementedError

    def intervals(self):
        """1D only: the region as a sorted list of disjoint closed intervals."""
        raise NotImplementedError(f"{type(self).__name__} has no interval form")

    def bounding_box(self, dim):
        raise NotImplementedError

    def __and__(self, other: "Region") -> "Region":
        if isinstance(other, Whole) or other == self:
            return self
        if isinstance(self, Whole):
            return other
        return Intersection((self, other))

    def __or__(self, other: "Region") -> "Region":
        if other == self:
            return self
        return Union((self, other))


@dataclass(frozen=True)
class Whole(Region):
    """All of R^d (the origin is never charged by a Levy measure anyway)."""

    def contains(self, points):
        return np.ones(_as_points(points).shape[0], dtype=bool)

    def shifted(self, offset):
        return self

    def intervals(self):
        return [(-np.inf, np.inf)]

    def bounding_box(self, dim):
        return np.full(dim, -np.inf), np.full(dim, np.inf)


@dataclass(frozen=True)
class Box(Region):
    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in np.atleast_1d(self.lo)))
        object.__setattr__(self, "hi", tuple(float(v) for v in np.atleast_1d(self.hi)))
        if len(self.lo) != len(self.hi):
            raise ValueError("box corners differ in dimension")

    @property
    def dim(self):
        return len(self.lo)

    def contains(self, points):
        pts = _as_points(points, self.dim)
        lo, hi = np.array(self.lo), np.array(self.hi)
        return np.all((pts >= lo - _EPS) & (pts <= hi + _EPS), axis=1)

    def contains_open(self, points):
        pts = _as_points(points, self.dim)
        lo, hi = np.array(self.lo), np.array(self.hi)
        return np.all((pts > lo + _EPS) & (pts < hi - _EPS), axis=1)

    def shifted(self, offset):
        off = np.atleast_1d(np.asarray(offset, dtype=float))
        return Box(tuple(np.array(self.lo) + off), tuple(np.array(self.hi) + off))

    def intervals(self):
        if self.dim != 1:
            raise NotImplementedError("interval form is 1D only")
        return _merge([(self.lo[0], self.hi[0])])

    def bounding_box(self, dim):
        return np.array(self.lo), np.array(self.hi)


def Interval(a, b) -> Box:
    return Box((a,), (b,))


@dataclass(frozen=True)
class Ball(Region):
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in np.atleast_1d(self.center)))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return len(self.center)

    def _dist(self, points):
        pts = _as_points(points, self.dim)
        return np.linalg.norm(pts - np.array(self.center), axis=1)

    def contains(self, points):
        return self._dist(points) <= self.radius + _EPS

    def contains_open(self, points):
        return self._dist(points) < self.radius - _EPS

    def shifted(self, offset):
        off = np.atleast_1d(np.asarray(offset, dtype=float))
        return Ball(tuple(np.array(self.center) + off), self.radius)

    def intervals(self):
        if self.dim != 1:
            raise NotImplementedError("interval form is 1D only")
        c = self.center[0]
        return _merge([(c - self.radius, c + self.radius)])

    def bounding_box(self, dim):
        c = np.array(self.center)
        return c - self.radius, c + self.radius


@dataclass(frozen=True)
class Union(Region):
    parts: tuple

    def contains(self, points):
        out = None
        for p in self.parts:
            m = p.contains(points)
            out = m if out is None else (out | m)
        return out

    def contains_open(self, points):
        out = None
        for p in self.parts:
            m = p.contains_open(points)
            out = m if out is None else (out | m)
        return out

    def shifted(self, offset):
        return Union(tuple(p.shifted(offset) for p in self.parts))

    def intervals(self):
        return _merge([iv for p in self.parts for iv in p.intervals()])

    def bounding_box(self, dim):
        boxes = [p.bounding_box(dim) for p in self.parts]
        return (np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0))


@dataclass(frozen=True)
class Intersection(Region):
    parts: tuple

    def __post_init__(self):
        uniq = []
        for p in self.parts:
            for q in (p.parts if isinstance(p, Intersection) else (p,)):
                if q not in uniq:
                    uniq.append(q)
        object.__setattr__(self, "parts", tuple(uniq))

    def contains(self, points):
        out = None
        for p in self.parts:
            m = p.contains(points)
            out = m if out is None else (out & m)
        return out

    def contains_open(self, points):
        out = None
        for p in self.parts:
            m = p.contains_open(points)
            out = m if out is None else (out & m)
        return out

    def shifted(self, offset):
        return Intersection(tuple(p.shifted(offset) for p in self.parts))

    def intervals(self):
        out = [(-np.inf, np.inf)]
        for p in self.parts:
            out = intersect_intervals(out, p.intervals())
        return out

    def bounding_box(self, dim):
        boxes = [p.bounding_box(dim) for p in self.parts]
        return (np.max([b[0] for b in boxes], axis=0), np.min([b[1] for b in boxes], axis=0))

    def __and__(self, other):
        if isinstance(other, Whole) or other in self.parts:
            return self
        return Intersection(self.parts + (other,))


def region_from_dict(spec: dict) -> Region:
    """Build a region from its configuration-file form."""
    kind = spec["type"]
    if kind == "interval":
        return Interval(spec["a"], spec["b"])
    if kind == "box":
        return Box(tuple(spec["lo"]), tuple(spec["hi"]))
    if kind == "ball":
        return Ball(tuple(spec["center"]), spec["radius"])
    if kind == "union":
        return Union(tuple(region_from_dict(p) for p in spec["parts"]))
    if kind == "whole":
        return Whole()
    raise ValueError(f"unknown region type {kind!r}")


def region_to_dict(region: Region) -> dict:
    if isinstance(region, Whole):
        return {"type": "whole"}
    if isinstance(region, Box):
        return {"type": "box", "lo": list(region.lo), "hi": list(region.hi)}
    if isinstance(region, Ball):
        return {"type": "ball", "center": list(region.center), "radius": region.radius}
    if isinstance(region, Union):
        return {"type": "union", "parts": [region_to_dict(p) for p in region.parts]}
    raise ValueError(f"cannot serialise {type(region).__name__}")


SupportMask = Region
__all__ = ["Region", "SupportMask", "Whole", "Box", "Interval", "Ball", "Union",
           "Intersection", "region_from_dict", "region_to_dict", "intersect_intervals"]


def ray_intervals(region: Region, direction) -> list:
    """Parameter intervals ``[t0, t1]`` (t >= 0) with ``t * direction`` inside ``region``.

    Exact for boxes and balls; unions and intersections combine them.
    """
    u = np.asarray(direction, dtype=float)
    full = [(0.0, np.inf)]
    if isinstance(region, Whole):
        return full
    if isinstance(region, Box):
        t0, t1 = 0.0, np.inf
        for lo, hi, uj in zip(region.lo, region.hi, u):
            if abs(uj) < 1e-300:
                if not (lo <= 0.0 <= hi):
                    return []
                continue
            a, b = lo / uj, hi / uj
            if a > b:
                a, b = b, a
            t0, t1 = max(t0, a), min(t1, b)
        return [(t0, t1)] if t1 > t0 else []
    if isinstance(region, Ball):
        c = np.array(region.center)
        # |t u - c|^2 = r^2 with |u| = 1
        bq = -2.0 * float(u @ c)
        cq = float(c @ c) - region.radius ** 2
        disc = bq * bq - 4.0 * cq
        if disc <= 0:
            return []
        s = np.sqrt(disc)
        t0, t1 = max((-bq - s) / 2.0, 0.0), (-bq + s) / 2.0
        return [(t0, t1)] if t1 > t0 else []
    if isinstance(region, Union):
        return _merge([iv for p in region.parts for iv in ray_intervals(p, u)])
    if isinstance(region, Intersection):
        out = full
        for p in region.parts:
            out = intersect_intervals(out, ray_intervals(p, u))
        return out
    raise NotImplementedError(f"no ray form for {type(region).__name__}")


__all__.append("ray_intervals")
