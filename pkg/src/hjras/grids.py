"""Rectangular grids, node fields, interpolation and difference stencils.

Node values are stored flat in row-major (C) order, last dimension
fastest. Periodic dimensions exclude the duplicate endpoint: a periodic
axis with ``count`` nodes over ``[lo, hi)`` has spacing ``(hi-lo)/count``.
"""

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import DomainExit

Array = np.ndarray


@dataclass(frozen=True)
class Grid:
    lo: Array
    hi: Array
    counts: Array
    periodic: Array

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        counts = np.asarray(self.counts, dtype=np.int64)
        periodic = np.asarray(self.periodic, dtype=bool)
        if not (lo.shape == hi.shape == counts.shape == periodic.shape):
            raise ValueError("grid component shapes disagree")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("grid bounds must be finite")
        if np.any(lo >= hi):
            raise ValueError("grid requires lower < upper per dimension")
        if np.any(counts < 3):
            raise ValueError("grid requires at least 3 nodes per dimension")
        for name, arr in (("lo", lo), ("hi", hi), ("counts", counts), ("periodic", periodic)):
            object.__setattr__(self, name, arr)
        spacing = np.where(periodic, (hi - lo) / counts, (hi - lo) / (counts - 1))
        object.__setattr__(self, "spacing", spacing)
        strides = np.ones_like(counts)
        for i in range(len(counts) - 2, -1, -1):
            strides[i] = strides[i + 1] * counts[i + 1]
        object.__setattr__(self, "strides", strides)

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.counts))

    @property
    def tol_level(self) -> float:
        """Half-width of the numerical zero-level band: 2 * max spacing."""
        return 2.0 * float(self.spacing.max())

    def axis_coords(self, dim: int) -> Array:
        return self.lo[dim] + self.spacing[dim] * np.arange(self.counts[dim])

    def points(self) -> Array:
        """All node coordinates, shape (num_nodes, ndim), row-major order."""
        axes = [self.axis_coords(i) for i in range(self.ndim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def wrap(self, x: Array) -> Array:
        """Wrap periodic coordinates of ``x`` (batched) into [lo, hi)."""
        if not self.periodic.any():
            return np.asarray(x, dtype=float)
        x = np.array(x, dtype=float, copy=True)
        for i in np.flatnonzero(self.periodic):
            span = self.hi[i] - self.lo[i]
            x[..., i] = self.lo[i] + np.mod(x[..., i] - self.lo[i], span)
        return x

    def scaled(self, counts: Iterable[int]) -> "Grid":
        return Grid(self.lo, self.hi, np.asarray(list(counts), dtype=np.int64), self.periodic)

    def compatible_with(self, other: "Grid") -> bool:
        return (
            self.ndim == other.ndim
            and np.allclose(self.lo, other.lo)
            and np.allclose(self.hi, other.hi)
            and np.array_equal(self.counts, other.counts)
            and np.array_equal(self.periodic, other.periodic)
        )


def node_coordinates(grid: Grid, multi_index) -> Array:
    """State coordinates of one node given its multi-index."""
    idx = np.asarray(multi_index, dtype=np.int64)
    if idx.shape != (grid.ndim,):
        raise ValueError(f"expected index of length {grid.ndim}")
    if np.any(idx < 0) or np.any(idx >= grid.counts):
        raise IndexError(f"index {idx.tolist()} outside grid counts {grid.counts.tolist()}")
    return grid.lo + grid.spacing * idx


@dataclass(frozen=True)
class ScalarField:
    """Flat node values bound to a grid, optionally time-stamped."""

    grid: Grid
    values: Array
    time: float | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size != self.grid.num_nodes:
            raise ValueError(
                f"field has {values.size} values for a grid of {self.grid.num_nodes} nodes"
            )
        object.__setattr__(self, "values", values)

    def as_ndarray(self) -> Array:
        return self.values.reshape(tuple(self.grid.counts))

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())


# ---------------------------------------------------------------------------
# Interpolation


def _locate(grid: Grid, x: Array):
    """Cell indices, weights and out-of-bounds mask for query batch ``x``.

    Returns ``(i0, w, oob)`` with ``i0`` int cell indices (..., n), ``w``
    weights in [0, 1], and ``oob`` flagging points outside non-periodic
    bounds (beyond a tiny roundoff slack).
    """
    x = np.asarray(x, dtype=float)
    t = (x - grid.lo) / grid.spacing
    i0 = np.empty(x.shape, dtype=np.int64)
    w = np.empty(x.shape)
    oob = np.zeros(x.shape[:-1], dtype=bool)
    for d in range(grid.ndim):
        td = t[..., d]
        if grid.periodic[d]:
            td = np.mod(td, grid.counts[d])
            cell = np.floor(td).astype(np.int64)
            cell = np.minimum(cell, grid.counts[d] - 1)
        else:
            slack = 1e-9 * (grid.counts[d] - 1)
            oob |= (td < -slack) | (td > grid.counts[d] - 1 + slack)
            td = np.clip(td, 0.0, float(grid.counts[d] - 1))
            cell = np.minimum(np.floor(td).astype(np.int64), grid.counts[d] - 2)
        i0[..., d] = cell
        w[..., d] = td - cell
    return i0, w, oob


def _gather_corners(grid: Grid, values: Array, i0: Array, w: Array) -> Array:
    """Multilinear combination of the 2^n cell corners."""
    out = np.zeros(i0.shape[:-1])
    for corner in range(1 << grid.ndim):
        flat = np.zeros(i0.shape[:-1], dtype=np.int64)
        weight = np.ones(i0.shape[:-1])
        for d in range(grid.ndim):
            take_hi = (corner >> d) & 1
            idx = i0[..., d] + take_hi
            if grid.periodic[d]:
                idx = np.mod(idx, grid.counts[d])
            flat = flat + idx * grid.strides[d]
            weight = weight * (w[..., d] if take_hi else 1.0 - w[..., d])
        out += weight * values[flat]
    return out


def interpolate_many(field: ScalarField, x: Array, values: Array | None = None):
    """Batched multilinear interpolation.

    Returns ``(vals, oob)``; out-of-bounds entries carry unspecified
    values and must be masked by the caller.
    """
    vals = field.values if values is None else values
    i0, w, oob = _locate(field.grid, x)
    return _gather_corners(field.grid, vals, i0, w), oob


def interpolate(field: ScalarField, x: Array) -> float:
    """Multilinear interpolation at one point; exact at nodes.

    Raises :class:`DomainExit` outside non-periodic bounds.
    """
    val, oob = interpolate_many(field, np.asarray(x, dtype=float))
    if np.any(oob):
        raise DomainExit(f"query point {np.asarray(x).tolist()} outside grid bounds")
    return float(val)


# ---------------------------------------------------------------------------
# Derivative stencils


def _shift(values_nd: Array, dim: int, offset: int, periodic: bool) -> Array:
    """Neighbor values along ``dim``; non-periodic edges replicate."""
    if periodic:
        return np.roll(values_nd, -offset, axis=dim)
    idx = np.arange(values_nd.shape[dim]) + offset
    np.clip(idx, 0, values_nd.shape[dim] - 1, out=idx)
    return np.take(values_nd, idx, axis=dim)


def central_difference_stack(field: ScalarField) -> Array:
    """Per-dimension derivative estimates at every node, shape (n, N).

    Central differences in the interior (wrapping on periodic axes),
    one-sided at non-periodic boundaries.
    """
    grid = field.grid
    nd = field.as_ndarray()
    out = np.empty((grid.ndim, grid.num_nodes))
    for d in range(grid.ndim):
        per = bool(grid.periodic[d])
        left = _shift(nd, d, -1, per)
        right = _shift(nd, d, +1, per)
        denom = np.full(nd.shape[d], 2.0 * grid.spacing[d])
        if not per:
            denom[0] = grid.spacing[d]
            denom[-1] = grid.spacing[d]
        shape = [1] * grid.ndim
        shape[d] = nd.shape[d]
        deriv = (right - left) / denom.reshape(shape)
        out[d] = deriv.ravel()
    return out


def gradient(field: ScalarField, x: Array) -> Array:
    """Interpolated node-derivative estimate of the field gradient at ``x``."""
    stack = central_difference_stack(field)
    x = np.asarray(x, dtype=float)
    i0, w, oob = _locate(field.grid, x)
    if np.any(oob):
        raise DomainExit(f"query point {x.tolist()} outside grid bounds")
    return np.stack(
        [_gather_corners(field.grid, stack[d], i0, w) for d in range(field.grid.ndim)],
        axis=-1,
    )


def upwind_derivative_pair(field: ScalarField, dim: int):
    """Left/right one-sided differences along ``dim`` as two fields.

    Non-periodic boundary nodes replicate the interior one-sided value,
    so the pair coincides there (linear-extrapolation ghost nodes).
    """
    grid = field.grid
    if not 0 <= dim < grid.ndim:
        raise ValueError(f"dim {dim} out of range")
    nd = field.as_ndarray()
    per = bool(grid.periodic[dim])
    inv_dx = 1.0 / grid.spacing[dim]
    left = _shift(nd, dim, -1, per)
    right = _shift(nd, dim, +1, per)
    p_minus = (nd - left) * inv_dx
    p_plus = (right - nd) * inv_dx
    if not per:
        first = [slice(None)] * grid.ndim
        last = [slice(None)] * grid.ndim
        first[dim] = 0
        last[dim] = grid.counts[dim] - 1
        p_minus[tuple(first)] = p_plus[tuple(first)]
        p_plus[tuple(last)] = p_minus[tuple(last)]
    return (
        ScalarField(grid, p_minus.ravel(), time=field.time),
        ScalarField(grid, p_plus.ravel(), time=field.time),
    )
