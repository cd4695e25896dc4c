"""Backward dynamic-programming evolution of grid value functions.

Values are parametrized by time-to-go ``tau >= 0``: slice 0 is the
terminal condition and larger ``tau`` means a longer remaining horizon.
Four problem kinds share one explicit Lax-Friedrichs step, differing
only in their clamp:

    reach        min(V, r)                 (non-increasing in tau)
    avoid        max(V, c)                 (non-decreasing in tau)
    reach_avoid  max(min(V, r), c)
    rclvf        max(V, h), capped         (non-decreasing, +gamma V source)
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .dynamics import ControlAffineSystem
from .errors import (
    DegenerateDynamicsError,
    DynamicsEvaluationError,
    NotStabilizableError,
    SolverDivergenceError,
)
from .grids import Grid, ScalarField
from .shapes import ball, rasterize

Array = np.ndarray

KINDS = ("reach", "avoid", "reach_avoid", "rclvf")

DEFAULT_CFL = 0.5
DEFAULT_TOL = 1e-3


@dataclass
class ValueSnapshots:
    """Time-stamped stack of value-function slices for one problem kind."""

    grid: Grid
    kind: str
    times: Array  # (T,), strictly increasing, times[0] == 0
    stack: Array  # (T, num_nodes)
    r_values: Array | None = None
    c_values: Array | None = None
    h_values: Array | None = None
    gamma: float = 0.0
    a_offset: float = 0.0
    v_cap: float = math.inf
    converged: bool | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.stack = np.asarray(self.stack, dtype=float)
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.stack.shape != (len(self.times), self.grid.num_nodes):
            raise ValueError("snapshot stack shape disagrees with times/grid")
        if len(self.times) and abs(self.times[0]) > 1e-12:
            raise ValueError("first snapshot must be the terminal slice (tau = 0)")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")

    @property
    def n_slices(self) -> int:
        return len(self.times)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def field(self, idx: int) -> ScalarField:
        return ScalarField(self.grid, self.stack[idx], time=float(self.times[idx]))

    def final_field(self) -> ScalarField:
        return self.field(self.n_slices - 1)

    def time_index(self, tau: float) -> int:
        """Index of the stored slice nearest to time-to-go ``tau``."""
        eps = 1e-9 * max(1.0, self.horizon)
        if tau < -eps or tau > self.horizon + eps:
            raise ValueError(
                f"time-to-go {tau} outside stored horizon [0, {self.horizon}]"
            )
        return int(np.argmin(np.abs(self.times - tau)))

    def capped_mask(self) -> Array:
        """Nodes held at the divergence cap (outside the value's domain)."""
        if not math.isfinite(self.v_cap):
            return np.zeros(self.grid.num_nodes, dtype=bool)
        return self.stack[-1] >= self.v_cap * (1.0 - 1e-12)


class SolverWorkspace:
    """Node-sampled dynamics and dissipation bounds for one (system, grid).

    Dynamics are time-invariant, so ``f``, ``g`` and ``E`` are evaluated
    once at every node and reused by each step. Two flux choices exist:
    the global Lax-Friedrichs sweep works for any dynamics; the exact
    per-dimension upwind (Godunov) sweep needs input-separable dynamics
    and is both sharper and free of spurious injection at value kinks.
    """

    def __init__(self, sys: ControlAffineSystem, grid: Grid):
        if sys.state_dim != grid.ndim:
            raise ValueError("system/grid dimension mismatch")
        for d in range(grid.ndim):
            if bool(grid.periodic[d]) != (d in sys.periodic_dims):
                raise ValueError(f"periodic flag of dim {d} disagrees between system and grid")
        self.sys = sys
        self.grid = grid
        pts = grid.points()
        self.f = np.ascontiguousarray(sys.f(pts), dtype=float)
        self.g = np.ascontiguousarray(sys.g(pts), dtype=float)
        self.E = np.ascontiguousarray(sys.E(pts), dtype=float)
        for name, arr in (("f", self.f), ("g", self.g), ("E", self.E)):
            if not np.all(np.isfinite(arr)):
                raise DynamicsEvaluationError(f"{name}(x) non-finite on the grid")
        self.u_lo = np.ascontiguousarray(sys.control_box[:, 0])
        self.u_hi = np.ascontiguousarray(sys.control_box[:, 1])
        self.d_lo = np.ascontiguousarray(sys.disturbance_box[:, 0])
        self.d_hi = np.ascontiguousarray(sys.disturbance_box[:, 1])
        u_abs = np.abs(sys.control_box).max(axis=1) if sys.control_dim else np.zeros(0)
        d_abs = np.abs(sys.disturbance_box).max(axis=1) if sys.disturbance_dim else np.zeros(0)
        self.alpha = (
            np.abs(self.f)
            + np.abs(self.g) @ u_abs
            + (np.abs(self.E) @ d_abs if sys.disturbance_dim else 0.0)
        ).max(axis=0)
        self.inv_dx = 1.0 / grid.spacing
        self.counts = np.ascontiguousarray(grid.counts)
        self.strides = np.ascontiguousarray(grid.strides)
        self.periodic = np.ascontiguousarray(grid.periodic)
        self._input_dims = None

    def input_dims(self):
        """State dimension touched by each input column, or raise.

        The exact-upwind sweep needs every control/disturbance column to
        act on a single state dimension (true for all shipped systems).
        Columns that vanish everywhere map to -1.
        """
        if self._input_dims is None:
            def column_dims(mat, label):
                dims = []
                for j in range(mat.shape[2]):
                    touched = np.flatnonzero(np.any(mat[:, :, j] != 0.0, axis=0))
                    if touched.size > 1:
                        raise ValueError(
                            f"{label} column {j} drives several state dimensions; "
                            "the exact-upwind sweep needs input-separable dynamics"
                        )
                    dims.append(int(touched[0]) if touched.size else -1)
                return np.asarray(dims, dtype=np.int64)

            self._input_dims = (
                column_dims(self.g, "control matrix"),
                column_dims(self.E, "disturbance matrix"),
            )
        return self._input_dims

    def cfl_dt(self, cfl: float) -> float:
        if not 0 < cfl <= 1:
            raise ValueError("cfl must be in (0, 1]")
        rate = float((self.alpha * self.inv_dx).sum())
        if rate <= 0.0:
            raise DegenerateDynamicsError("all dissipation bounds are zero")
        return cfl / rate

    def sweep(self, values: Array, dt: float, gamma: float) -> Array:
        return _kernels.lf_sweep(
            values,
            self.f,
            self.g,
            self.E,
            self.u_lo,
            self.u_hi,
            self.d_lo,
            self.d_hi,
            self.counts,
            self.strides,
            self.periodic,
            self.inv_dx,
            self.alpha,
            dt,
            gamma,
        )

    def separable(self) -> bool:
        try:
            self.input_dims()
            return True
        except ValueError:
            return False

    def auto_sweep(self, values: Array, dt: float, gamma: float) -> Array:
        if self.separable():
            return self.godunov_sweep(values, dt, gamma)
        return self.sweep(values, dt, gamma)

    def godunov_sweep(self, values: Array, dt: float, gamma: float) -> Array:
        cdim, edim = self.input_dims()
        return _kernels.godunov_sweep(
            values,
            self.f,
            self.g,
            self.E,
            self.u_lo,
            self.u_hi,
            self.d_lo,
            self.d_hi,
            cdim,
            edim,
            self.counts,
            self.strides,
            self.periodic,
            self.inv_dx,
            dt,
            gamma,
        )


def cfl_dt(sys: ControlAffineSystem, grid: Grid, cfl: float = DEFAULT_CFL) -> float:
    """Largest stable explicit step: ``cfl / sum_i(alpha_i / dx_i)``."""
    return SolverWorkspace(sys, grid).cfl_dt(cfl)


def _interior_nodes(grid: Grid, frame: int) -> Array:
    """Boolean mask of nodes at least ``frame`` cells from non-periodic edges."""
    keep = np.ones(tuple(grid.counts), dtype=bool)
    for d in range(grid.ndim):
        if grid.periodic[d]:
            continue
        sl = [slice(None)] * grid.ndim
        sl[d] = slice(0, frame)
        keep[tuple(sl)] = False
        sl[d] = slice(int(grid.counts[d]) - frame, None)
        keep[tuple(sl)] = False
    return keep.ravel()


def _apply_clamp(kind: str, values: Array, r=None, c=None, h=None, v_cap=math.inf) -> Array:
    if kind == "reach":
        return np.minimum(values, r)
    if kind == "avoid":
        return np.maximum(values, c)
    if kind == "reach_avoid":
        return np.maximum(np.minimum(values, r), c)
    if kind == "rclvf":
        out = np.maximum(values, h)
        if math.isfinite(v_cap):
            np.minimum(out, v_cap, out=out)
        return out
    raise ValueError(f"unknown kind {kind!r}")


def _clamp_arrays(kind, r_field, c_field, h_field):
    need = {
        "reach": ("r",),
        "avoid": ("c",),
        "reach_avoid": ("r", "c"),
        "rclvf": ("h",),
    }[kind]
    supplied = {"r": r_field, "c": c_field, "h": h_field}
    for key in need:
        if supplied[key] is None:
            raise ValueError(f"kind {kind!r} requires the {key} cost field")
    return tuple(None if supplied[k] is None else supplied[k].values for k in ("r", "c", "h"))


def lf_step(
    sys: ControlAffineSystem,
    V: ScalarField,
    kind: str,
    dt: float,
    r_field: ScalarField | None = None,
    c_field: ScalarField | None = None,
    h_field: ScalarField | None = None,
    gamma: float = 0.0,
    v_cap: float = math.inf,
    workspace: SolverWorkspace | None = None,
) -> ScalarField:
    """One explicit Euler step of the clamped level-set update.

    Refuses steps beyond the CFL bound; raises
    :class:`SolverDivergenceError` on non-finite output.
    """
    ws = workspace if workspace is not None else SolverWorkspace(sys, V.grid)
    dt_max = ws.cfl_dt(1.0)
    if dt > dt_max * (1 + 1e-12):
        raise ValueError(f"dt={dt} violates the CFL bound {dt_max}")
    r, c, h = _clamp_arrays(kind, r_field, c_field, h_field)
    out = ws.sweep(V.values, dt, gamma)
    out = _apply_clamp(kind, out, r, c, h, v_cap)
    if not np.all(np.isfinite(out)):
        raise SolverDivergenceError("value iteration produced non-finite node values")
    return ScalarField(V.grid, out, time=V.time)


def _segment_steps(seg: float, dt_cap: float) -> tuple[int, float]:
    n = max(1, math.ceil(seg / dt_cap - 1e-12))
    return n, seg / n


def solve_finite_horizon(
    sys: ControlAffineSystem,
    kind: str,
    horizon: float,
    snapshot_stride: float,
    r_field: ScalarField | None = None,
    c_field: ScalarField | None = None,
    cfl: float = DEFAULT_CFL,
) -> ValueSnapshots:
    """Evolve from the terminal slice out to ``tau = horizon``.

    Snapshots land on exact multiples of ``snapshot_stride`` (the final
    slice is always recorded); the internal dt subdivides each stride.
    Input-separable systems use the exact upwind flux; everything else
    falls back to the Lax-Friedrichs sweep.
    """
    if kind not in ("reach", "avoid", "reach_avoid"):
        raise ValueError(f"solve_finite_horizon does not handle kind {kind!r}")
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    if snapshot_stride <= 0:
        raise ValueError("snapshot_stride must be > 0")
    r, c, _ = _clamp_arrays(kind, r_field, c_field, None)
    grid = (r_field or c_field).grid
    ws = SolverWorkspace(sys, grid)
    dt_cap = ws.cfl_dt(cfl)

    terminal = {"reach": r, "avoid": c, "reach_avoid": None}[kind]
    if terminal is None:
        terminal = np.maximum(r, c)
    times = [0.0]
    stack = [terminal.copy()]
    n_strides = int(math.floor(horizon / snapshot_stride + 1e-9))
    snap_times = [i * snapshot_stride for i in range(1, n_strides + 1)]
    if not snap_times or snap_times[-1] < horizon - 1e-9 * max(1.0, horizon):
        snap_times.append(horizon)

    V = terminal.copy()
    tau = 0.0
    for target_tau in snap_times:
        seg = target_tau - tau
        n, dt = _segment_steps(seg, dt_cap)
        for _ in range(n):
            V = _apply_clamp(kind, ws.auto_sweep(V, dt, 0.0), r, c, None)
        if not np.all(np.isfinite(V)):
            raise SolverDivergenceError("value iteration produced non-finite node values")
        tau = target_tau
        times.append(tau)
        stack.append(V.copy())
    return ValueSnapshots(
        grid=grid,
        kind=kind,
        times=np.asarray(times),
        stack=np.asarray(stack),
        r_values=r,
        c_values=c,
    )


@dataclass
class ConvergenceResult:
    """Outcome of a run-to-convergence evolution."""

    field: ScalarField
    converged: bool
    tau: float
    residual: float
    c_values: Array | None = None


def solve_converged_avoid(
    sys: ControlAffineSystem,
    c_field: ScalarField,
    tol: float = DEFAULT_TOL,
    max_horizon: float = 80.0,
    cfl: float = DEFAULT_CFL,
) -> ConvergenceResult:
    """Avoid evolution until the sup-norm change per unit pseudo-time < tol.

    A non-converged result is flagged but still usable (conservative).
    Values are capped at ten times the largest ``|c|``: on escape routes
    an unbounded cost grows without bound through the extrapolating
    boundary, and any node that far above zero is unavoidable anyway.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    grid = c_field.grid
    ws = SolverWorkspace(sys, grid)
    dt_cap = ws.cfl_dt(cfl)
    n_unit, dt = _segment_steps(1.0, dt_cap)
    c = c_field.values
    v_cap = 10.0 * max(float(np.abs(c).max()), 1e-6)
    V = c.copy()
    tau = 0.0
    residual = math.inf
    converged = False
    while tau < max_horizon - 1e-9:
        prev = V.copy()
        for _ in range(n_unit):
            V = np.minimum(_apply_clamp("avoid", ws.auto_sweep(V, dt, 0.0), None, c, None), v_cap)
        if not np.all(np.isfinite(V)):
            raise SolverDivergenceError("avoid evolution produced non-finite values")
        tau += 1.0
        residual = float(np.abs(V - prev).max())
        if residual < tol:
            converged = True
            break
    return ConvergenceResult(
        field=ScalarField(grid, V, time=tau),
        converged=converged,
        tau=tau,
        residual=residual,
        c_values=c,
    )


def solve_rclvf(
    sys: ControlAffineSystem,
    grid: Grid,
    p,
    gamma: float,
    a_offset: float = 0.0,
    tol: float = DEFAULT_TOL,
    max_horizon: float = 80.0,
    cfl: float = DEFAULT_CFL,
    divergence_level: float | None = None,
    poi_dims=None,
) -> ValueSnapshots:
    """Discounted stabilization value around the point of interest ``p``.

    Evolves ``V`` with the ``+gamma V`` source and ``max(., h)`` clamp,
    ``h(x) = |x - p| - a_offset`` (periodic dims wrapped). ``poi_dims``
    restricts the distance to a coordinate subset, e.g. position-only
    stabilization of a vehicle whose heading cannot settle. Node values
    are capped at ten times the largest ``|h|``; capped nodes mark the
    complement of the stabilizable domain.

    The growth source makes the operator improper: Lax-Friedrichs
    dissipation injected at the kink minimum of ``h`` would be amplified
    exponentially and the iteration would never settle, so this solve
    uses the exact per-dimension Godunov upwind flux instead (same CFL
    bound, no artificial dissipation; requires input-separable dynamics).

    Divergence (offset too small for any invariant sublevel set) shows up
    as ``min V`` climbing at the exponential source rate. The run is
    flagged non-converged early when ``min V`` keeps growing by
    ``exp(gamma/4)`` per unit pseudo-time from above
    ``divergence_level``, or when it passes 5% of the cap.
    """
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    if a_offset < 0:
        raise ValueError("a_offset must be >= 0")
    if tol <= 0:
        raise ValueError("tol must be > 0")
    p = np.asarray(p, dtype=float)
    if p.shape != (grid.ndim,):
        raise ValueError("poi dimension mismatch")
    if poi_dims is None:
        shape = ball(p, a_offset)
    else:
        dims = tuple(int(d) for d in poi_dims)
        shape = ball(p[list(dims)], a_offset, dims=dims)
    h_field = rasterize(shape, grid)
    h = h_field.values
    v_cap = 10.0 * float(np.abs(h).max())
    if divergence_level is None:
        divergence_level = grid.tol_level

    ws = SolverWorkspace(sys, grid)
    dt_cap = ws.cfl_dt(cfl)
    n_unit, dt = _segment_steps(1.0, dt_cap)
    # Non-periodic boundary nodes are pinned at the cap: their values
    # depend on what happens outside the grid, and with the growth source
    # an extrapolating closure self-amplifies and infects the interior.
    # Pinning is conservative (the ring is declared unstabilizable) and
    # the steering terms stop the capped zone at the states that really
    # cannot avoid exiting.
    boundary = ~_interior_nodes(grid, 1)
    V = h.copy()
    V[boundary] = v_cap
    tau = 0.0
    residual = math.inf
    converged = False
    growth_ratio = math.exp(0.25 * gamma)
    growth_streak = 0
    prev_min = float(V.min())
    while tau < max_horizon - 1e-9:
        prev = V.copy()
        for _ in range(n_unit):
            V = _apply_clamp("rclvf", ws.godunov_sweep(V, dt, gamma), None, None, h, v_cap)
            V[boundary] = v_cap
        if not np.all(np.isfinite(V)):
            raise SolverDivergenceError("stabilization value produced non-finite values")
        tau += 1.0
        residual = float(np.abs(V - prev).max())
        if residual < tol:
            converged = True
            break
        cur_min = float(V.min())
        if prev_min > divergence_level and cur_min > prev_min * growth_ratio:
            growth_streak += 1
        else:
            growth_streak = 0
        prev_min = cur_min
        if cur_min > 0.05 * v_cap or growth_streak >= 3:
            break
    return ValueSnapshots(
        grid=grid,
        kind="rclvf",
        times=np.asarray([0.0, tau]) if tau > 0 else np.asarray([0.0]),
        stack=np.asarray([h, V]) if tau > 0 else np.asarray([h]),
        h_values=h,
        gamma=gamma,
        a_offset=a_offset,
        v_cap=v_cap,
        converged=converged,
    )


def _offset_search(
    sys: ControlAffineSystem,
    grid: Grid,
    p,
    gamma: float,
    tol: float = DEFAULT_TOL,
    max_horizon: float = 80.0,
    cfl: float = DEFAULT_CFL,
    poi_dims=None,
):
    """Doubling-then-bisection search for the smallest converging offset.

    Resolution is one grid spacing. Returns ``(offset, snapshots)`` of a
    verified-converged solve.
    """
    resolution = float(grid.spacing.max())
    a_max = float(np.linalg.norm(grid.hi - grid.lo))

    def probe(a):
        return solve_rclvf(
            sys, grid, p, gamma, a_offset=a, tol=tol, max_horizon=max_horizon, cfl=cfl,
            poi_dims=poi_dims,
        )

    snaps = probe(0.0)
    if snaps.converged:
        return 0.0, snaps
    lo_fail = 0.0
    a = resolution
    while True:
        snaps = probe(a)
        if snaps.converged:
            break
        lo_fail = a
        a *= 2.0
        if a > a_max:
            raise NotStabilizableError(
                f"no offset up to {a_max:.3g} makes the stabilization value converge "
                f"(poi {np.asarray(p).tolist()}, gamma {gamma})"
            )
    hi_ok, best = a, snaps
    while hi_ok - lo_fail > resolution * (1 + 1e-9):
        mid = 0.5 * (hi_ok + lo_fail)
        snaps = probe(mid)
        if snaps.converged:
            hi_ok, best = mid, snaps
        else:
            lo_fail = mid
    return hi_ok, best


def estimate_min_invariant_offset(
    sys: ControlAffineSystem,
    grid: Grid,
    p,
    gamma: float,
    tol: float = DEFAULT_TOL,
    max_horizon: float = 80.0,
    cfl: float = DEFAULT_CFL,
    poi_dims=None,
) -> float:
    """Smallest ball offset (to grid resolution) with a converging value."""
    offset, _ = _offset_search(sys, grid, p, gamma, tol, max_horizon, cfl, poi_dims=poi_dims)
    return offset
