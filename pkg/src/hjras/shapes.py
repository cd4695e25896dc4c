"""Implicit-surface shape expressions.

Shapes evaluate to level-set functions: negative inside the described
set, zero on its boundary. Combinators follow the usual min/max algebra
(union = pointwise min, intersection = pointwise max, complement =
negation).

Primitives may act on a subset of state dimensions (``dims``), which
turns a low-dimensional ball or box into a cylinder through the
remaining coordinates; by default a primitive uses the first
``len(center)`` dimensions. ``periods`` optionally supplies
per-dimension period lengths (0 disables wrapping) so distances respect
angular coordinates.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grids import Grid, ScalarField

Array = np.ndarray


def _select(x: Array, dims: tuple | None, width: int):
    if dims is None:
        return x[..., :width]
    return x[..., list(dims)]


def _select_periods(periods: Array | None, dims: tuple | None, width: int):
    if periods is None:
        return None
    if dims is None:
        return periods[:width]
    return periods[list(dims)]


def _wrapped_delta(xs: Array, center: Array, periods: Array | None) -> Array:
    delta = xs - center
    if periods is not None:
        for d in range(delta.shape[-1]):
            p = periods[d]
            if p > 0:
                delta[..., d] = (delta[..., d] + 0.5 * p) % p - 0.5 * p
    return delta


class ShapeExpr:
    """Base class; subclasses implement ``evaluate``."""

    def evaluate(self, x: Array, periods: Array | None = None) -> Array:
        raise NotImplementedError

    def __call__(self, x, periods=None):
        return self.evaluate(np.asarray(x, dtype=float), periods)


@dataclass(frozen=True)
class Ball(ShapeExpr):
    center: tuple
    radius: float
    dims: tuple | None = None

    def evaluate(self, x, periods=None):
        c = np.asarray(self.center, dtype=float)
        xs = _select(np.asarray(x, dtype=float), self.dims, len(c))
        delta = _wrapped_delta(xs, c, _select_periods(periods, self.dims, len(c)))
        return np.linalg.norm(delta, axis=-1) - self.radius


@dataclass(frozen=True)
class AxisBox(ShapeExpr):
    lo: tuple
    hi: tuple
    dims: tuple | None = None

    def evaluate(self, x, periods=None):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        xs = _select(np.asarray(x, dtype=float), self.dims, len(lo))
        center = 0.5 * (lo + hi)
        delta = _wrapped_delta(xs, center, _select_periods(periods, self.dims, len(lo)))
        # max-form box function: negative inside, Lipschitz everywhere
        return np.max(np.abs(delta) - 0.5 * (hi - lo), axis=-1)


@dataclass(frozen=True)
class HalfPlane(ShapeExpr):
    """Set {x : normal . x >= offset}; level value ``offset - normal.x``."""

    normal: tuple
    offset: float
    dims: tuple | None = None

    def evaluate(self, x, periods=None):
        n = np.asarray(self.normal, dtype=float)
        xs = _select(np.asarray(x, dtype=float), self.dims, len(n))
        return self.offset - xs @ n


@dataclass(frozen=True)
class Union(ShapeExpr):
    members: tuple

    def evaluate(self, x, periods=None):
        return np.minimum.reduce([m.evaluate(x, periods) for m in self.members])


@dataclass(frozen=True)
class Intersection(ShapeExpr):
    members: tuple

    def evaluate(self, x, periods=None):
        return np.maximum.reduce([m.evaluate(x, periods) for m in self.members])


@dataclass(frozen=True)
class Complement(ShapeExpr):
    member: ShapeExpr

    def evaluate(self, x, periods=None):
        return -self.member.evaluate(x, periods)


def _dims_tuple(dims) -> tuple | None:
    return None if dims is None else tuple(int(d) for d in dims)


def ball(center: Sequence[float], radius: float, dims=None) -> Ball:
    if radius < 0:
        raise ValueError("ball radius must be >= 0")
    return Ball(tuple(float(c) for c in center), float(radius), _dims_tuple(dims))


def axis_box(lo: Sequence[float], hi: Sequence[float], dims=None) -> AxisBox:
    lo_t = tuple(float(v) for v in lo)
    hi_t = tuple(float(v) for v in hi)
    if len(lo_t) != len(hi_t):
        raise ValueError("axis_box lo/hi length mismatch")
    if any(a >= b for a, b in zip(lo_t, hi_t)):
        raise ValueError("axis_box requires lo < hi per component")
    return AxisBox(lo_t, hi_t, _dims_tuple(dims))


def half_plane(normal: Sequence[float], offset: float, dims=None) -> HalfPlane:
    return HalfPlane(tuple(float(v) for v in normal), float(offset), _dims_tuple(dims))


def union(*members: ShapeExpr) -> Union:
    return Union(tuple(members))


def intersection(*members: ShapeExpr) -> Intersection:
    return Intersection(tuple(members))


def complement(member: ShapeExpr) -> Complement:
    return Complement(member)


def grid_periods(grid: Grid) -> Array:
    """Period lengths for wrapping shape evaluation on ``grid`` (0 = none)."""
    return np.where(grid.periodic, grid.hi - grid.lo, 0.0)


def rasterize(shape: ShapeExpr, grid: Grid) -> ScalarField:
    """Evaluate a shape at every grid node."""
    return ScalarField(grid, shape.evaluate(grid.points(), grid_periods(grid)))


def rasterize_obstacle(shape: ShapeExpr, grid: Grid) -> ScalarField:
    """Obstacle cost field: positive inside the described set.

    Shapes are negative inside; obstacle costs follow the opposite
    (zero-superlevel) convention, so this is the negated rasterization.
    """
    return ScalarField(grid, -shape.evaluate(grid.points(), grid_periods(grid)))
