"""Uniform Cartesian grids, the interior/exterior node partition, and fields on them."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, ResolutionError, ShapeMismatchError
from .geometry import Ball, Box, Interval, Region, Whole

MAX_DIM = 2


@dataclass(frozen=True)
class Grid:
    """Nodes ``origin + h * (i_1, ..., i_d)`` with ``0 <= i_j < shape[j]``."""

    dim: int
    h: float
    origin: tuple
    shape: tuple

    def __post_init__(self):
        if self.h <= 0:
            raise ConfigurationError("grid spacing must be positive")
        if len(self.origin) != self.dim or len(self.shape) != self.dim:
            raise ConfigurationError("origin/shape do not match the dimension")

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    def axis(self, j: int) -> np.ndarray:
        return self.origin[j] + self.h * np.arange(self.shape[j])

    def coordinates(self) -> np.ndarray:
        """``(n_nodes, d)`` node coordinates in C (row-major) order."""
        mesh = np.meshgrid(*[self.axis(j) for j in range(self.dim)], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def flat_index(self, multi) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.asarray(m) for m in multi), self.shape)

    def multi_index(self, flat) -> tuple:
        return np.unravel_index(np.asarray(flat), self.shape)

    def locate(self, point, tol=1e-9) -> int:
        """Flat index of the node at ``point``; raises if ``point`` is not a node."""
        p = np.atleast_1d(np.asarray(point, dtype=float))
        ij = np.rint((p - np.array(self.origin)) / self.h).astype(int)
        if np.any(np.abs(np.array(self.origin) + ij * self.h - p) > tol * max(1.0, self.h)):
            raise ConfigurationError(f"{p.tolist()} is not a grid node")
        if np.any(ij < 0) or np.any(ij >= np.array(self.shape)):
            raise ConfigurationError(f"{p.tolist()} lies outside the grid")
        return int(self.flat_index(ij))


class NodeClass(enum.IntEnum):
    INTERIOR = 0
    EXTERIOR = 1
    OUTSIDE = 2


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """Interior set ``D``, halo ``E``, and how jumps beyond the halo are treated.

    With ``whole_space`` the halo is a truncation of ``E = R^d``: jumps landing
    beyond it see the far-field value.  Otherwise the jump measure at each
    interior node is clipped to ``E - x``.
    """

    grid: Grid
    D: Region
    E: Region
    labels: np.ndarray
    far_field_radius: float
    whole_space: bool = True

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int8)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        pos = np.full(labels.size, -1, dtype=np.int64)
        for cls in NodeClass:
            idx = np.flatnonzero(labels == cls)
            pos[idx] = np.arange(idx.size)
            object.__setattr__(self, f"_{cls.name.lower()}", idx)
        object.__setattr__(self, "_position", pos)

    @property
    def interior(self) -> np.ndarray:
        """Flat indices of interior nodes (sorted)."""
        return self._interior

    @property
    def exterior(self) -> np.ndarray:
        """Flat indices of exterior-data (halo) nodes."""
        return self._exterior

    @property
    def outside(self) -> np.ndarray:
        return self._outside

    @property
    def n_interior(self) -> int:
        return int(self._interior.size)

    def position(self, flat) -> np.ndarray:
        """Position of a node inside its own class list."""
        return self._position[flat]

    def support_mask(self, flat: int) -> Region:
        """Jump targets ``z`` admissible from node ``flat`` (a translate of E-bar, or the
        truncation ball in the whole-space case)."""
        if self.whole_space:
            return Ball(np.zeros(self.grid.dim), self.far_field_radius)
        x = np.array(self.grid.origin) + self.grid.h * np.array(self.grid.multi_index(flat))
        return self.E.shifted(-x)

    def far_channel(self, points) -> np.ndarray:
        """Far-field channel of points beyond the halo: in 1D 0 = left, 1 = right; else 0."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.grid.dim)
        if self.grid.dim == 1:
            lo, hi = self.D.bounding_box(1)
            return (pts[:, 0] > 0.5 * (lo[0] + hi[0])).astype(np.int64)
        return np.zeros(pts.shape[0], dtype=np.int64)

    @property
    def n_far_channels(self) -> int:
        return 2 if self.grid.dim == 1 else 1


def classify_nodes(grid: Grid, D: Region, E: Region, whole_space: bool = True,
                   far_field_radius: Optional[float] = None) -> DomainSpec:
    """Partition the grid into interior (in D), exterior data (in E, not D), outside."""
    if grid.dim > MAX_DIM:
        raise ConfigurationError(f"only d <= {MAX_DIM} is supported")
    x = grid.coordinates()
    inside_d = D.contains_open(x)
    inside_e = E.contains_open(x) if not isinstance(E, Whole) else np.ones(len(x), bool)
    if np.any(inside_d & ~inside_e):
        raise ConfigurationError("D is not contained in E")
    if not inside_d.any():
        raise ResolutionError("no grid node lies inside D")
    labels = np.full(len(x), NodeClass.OUTSIDE, dtype=np.int8)
    labels[inside_e] = NodeClass.EXTERIOR
    labels[inside_d] = NodeClass.INTERIOR
    if not whole_space and not np.any(labels == NodeClass.EXTERIOR) and not E == D:
        raise ConfigurationError("E \\ D contains no node to hold exterior data")
    if far_field_radius is None:
        far_field_radius = _halo_radius(grid, x, labels)
    return DomainSpec(grid, D, E, labels, float(far_field_radius), whole_space)


def _halo_radius(grid, x, labels):
    """Largest r such that every interior node's r-ball stays inside the node set of E."""
    other = x[labels == NodeClass.OUTSIDE]
    interior = x[labels == NodeClass.INTERIOR]
    lo = np.array(grid.origin)
    hi = lo + grid.h * (np.array(grid.shape) - 1)
    to_edge = np.min(np.minimum(interior - lo, hi - interior), axis=1) + grid.h
    if other.size:
        dist, _ = cKDTree(other).query(interior)
        to_edge = np.minimum(to_edge, dist)
    return float(np.min(to_edge) - grid.h / 2)


def _lattice(anchor, lo, hi, h):
    """Integers j with lo < anchor + j h < hi (open bounds)."""
    j0 = int(np.floor((lo - anchor) / h + 1e-9)) + 1
    j1 = int(np.ceil((hi - anchor) / h - 1e-9)) - 1
    return j0, j1


def build_interval_domain(a: float, b: float, h: float, halo_width: float,
                          whole_space: bool = True) -> tuple:
    """Grid on ``(a - halo, b + halo)`` with nodes ``a + j h``; D = (a, b)."""
    if not a < b:
        raise ConfigurationError("need a < b")
    if not h > 0:
        raise ConfigurationError("h must be positive")
    if halo_width < h:
        raise ConfigurationError("halo width must be at least one grid spacing")
    j0, j1 = _lattice(a, a - halo_width, b + halo_width, h)
    grid = Grid(1, float(h), (a + j0 * h,), (j1 - j0 + 1,))
    D, E = Interval(a, b), Interval(a - halo_width, b + halo_width)
    x = grid.coordinates()
    if np.count_nonzero(D.contains_open(x)) < 3:
        raise ResolutionError(f"h={h} leaves fewer than 3 interior nodes in ({a}, {b})")
    dom = classify_nodes(grid, D, E, whole_space=whole_space, far_field_radius=halo_width)
    return grid, dom


def build_box_domain(lo, hi, h: float, halo_width: float, whole_space: bool = True) -> tuple:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    if np.any(lo >= hi):
        raise ConfigurationError("box corners must satisfy lo < hi")
    if halo_width < h:
        raise ConfigurationError("halo width must be at least one grid spacing")
    ranges = [_lattice(l, l - halo_width, u + halo_width, h) for l, u in zip(lo, hi)]
    grid = Grid(len(lo), float(h), tuple(l + r[0] * h for l, r in zip(lo, ranges)),
                tuple(r[1] - r[0] + 1 for r in ranges))
    D, E = Box(tuple(lo), tuple(hi)), Box(tuple(lo - halo_width), tuple(hi + halo_width))
    dom = classify_nodes(grid, D, E, whole_space=whole_space, far_field_radius=halo_width)
    if dom.n_interior < 3:
        raise ResolutionError("fewer than 3 interior nodes")
    return grid, dom


def build_ball_domain(center, radius: float, h: float, halo_width: float,
                      whole_space: bool = True) -> tuple:
    c = np.asarray(center, float)
    if halo_width < h:
        raise ConfigurationError("halo width must be at least one grid spacing")
    R = radius + halo_width
    ranges = [_lattice(ci, ci - R, ci + R, h) for ci in c]
    grid = Grid(len(c), float(h), tuple(ci + r[0] * h for ci, r in zip(c, ranges)),
                tuple(r[1] - r[0] + 1 for r in ranges))
    D, E = Ball(tuple(c), radius), Ball(tuple(c), R)
    dom = classify_nodes(grid, D, E, whole_space=whole_space, far_field_radius=halo_width)
    if dom.n_interior < 3:
        raise ResolutionError("fewer than 3 interior nodes")
    return grid, dom


@dataclass(eq=False)
class Field:
    """One value per grid node (flat, C order); values beyond E hold the far-field value."""

    grid: Grid
    values: np.ndarray
    time: Optional[float] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.grid.n_nodes:
            raise ShapeMismatchError(
                f"field has {self.values.size} values, grid has {self.grid.n_nodes} nodes")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def at(self, point) -> float:
        return float(self.values[self.grid.locate(point)])

    def copy(self, values=None, time=None) -> "Field":
        return Field(self.grid, self.values.copy() if values is None else values,
                     self.time if time is None else time, dict(self.info))


def evaluate(grid: Grid, value, points=None) -> np.ndarray:
    """Evaluate a scalar, array, or callable of ``(n, d)`` coordinates at the nodes."""
    x = grid.coordinates() if points is None else points
    if callable(value):
        out = np.asarray(value(x), dtype=float)
    else:
        out = np.asarray(value, dtype=float)
    if out.ndim == 0:
        return np.full(x.shape[0], float(out))
    if out.shape[0] != x.shape[0]:
        out = out.reshape(x.shape[0], *out.shape[1:]) if out.size % x.shape[0] == 0 else out
    if out.shape[0] != x.shape[0]:
        raise ShapeMismatchError("value does not match the number of nodes")
    if out.ndim == 2 and out.shape[1] == 1:
        out = out[:, 0]
    return out


def field_from_function(grid: Grid, func, time=None) -> Field:
    return Field(grid, evaluate(grid, func), time)
