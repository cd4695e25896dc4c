"""Sample-and-hold trajectory synthesis and the RAS under-approximation.

The forward-propagation loop follows the two-block structure: a
reach-avoid block driven by timed reach/avoid control sets, then a
stabilize-avoid block that runs until the trajectory enters the largest
stabilization sublevel set disjoint from the permanent obstacle. Seeds
whose admissible set empties are rejected immediately; accepted seeds
are verified post-hoc against the problem definition, so the returned
membership mask under-approximates by construction.

Rollouts are vectorized over seeds. Control draws come from
counter-based streams keyed by (run seed, seed index, step), so chunked
or threaded execution reproduces serial results bit-for-bit.
"""

import math
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import acs as acs_mod
from . import rng as rng_mod
from .dynamics import ControlAffineSystem
from .errors import StabilizeRegionUnusableError
from .grids import (
    Grid,
    ScalarField,
    _gather_corners,
    _locate,
    central_difference_stack,
    interpolate,
    interpolate_many,
)
from .shapes import ShapeExpr, grid_periods, rasterize_obstacle
from .solver import ValueSnapshots

Array = np.ndarray

PHASE_REACH = 0
PHASE_STABILIZE = 1
PHASE_NAMES = {PHASE_REACH: "reach_avoid", PHASE_STABILIZE: "stabilize_avoid"}

# rejection / audit codes
ACCEPTED = 0
R_INITIAL_UNSAFE = 1
R_REACH_INFEASIBLE = 2
R_TIMED_AVOID_INFEASIBLE = 3
R_CONVERGED_AVOID_INFEASIBLE = 4
R_STABILIZE_OUTSIDE_DOMAIN = 5
R_STABILIZE_INFEASIBLE = 6
R_EMPTY_INTERSECTION = 7
R_DOMAIN_EXIT = 8
R_STABILIZE_TIMEOUT = 9
R_VERIFY_FAILED = 10
R_PENDING = -1

CODE_NAMES = {
    ACCEPTED: "accepted",
    R_INITIAL_UNSAFE: "initial_unsafe",
    R_REACH_INFEASIBLE: "reach_infeasible",
    R_TIMED_AVOID_INFEASIBLE: "timed_avoid_infeasible",
    R_CONVERGED_AVOID_INFEASIBLE: "converged_avoid_infeasible",
    R_STABILIZE_OUTSIDE_DOMAIN: "stabilize_outside_domain",
    R_STABILIZE_INFEASIBLE: "stabilize_infeasible",
    R_EMPTY_INTERSECTION: "empty_intersection",
    R_DOMAIN_EXIT: "domain_exit",
    R_STABILIZE_TIMEOUT: "stabilize_timeout",
    R_VERIFY_FAILED: "verify_failed",
    R_PENDING: "pending",
}


@dataclass(frozen=True)
class DisturbancePolicy:
    """How the rollout realizes the disturbance input.

    ``worst_case_active`` plays the maximizing disturbance against the
    gradient of the value function currently constraining the control
    (reach value during the reach block, stabilization value after),
    re-evaluated at every internal integrator stage. ``zero`` plays 0;
    ``seeded_random`` draws one uniform box sample per hold step.
    """

    mode: str = "worst_case_active"

    def __post_init__(self):
        if self.mode not in ("worst_case_active", "zero", "seeded_random"):
            raise ValueError(f"unknown disturbance policy {self.mode!r}")


@dataclass(frozen=True)
class TimedShape:
    shape: ShapeExpr
    window: tuple

    def __post_init__(self):
        w = (float(self.window[0]), float(self.window[1]))
        if w[0] < 0 or w[1] <= w[0]:
            raise ValueError(f"window {w} must satisfy 0 <= start < end")
        object.__setattr__(self, "window", w)

    @property
    def deadline(self) -> float:
        return self.window[1]


def _check_chained(entries, label):
    expected = 0.0
    for i, ts in enumerate(entries):
        if abs(ts.window[0] - expected) > 1e-9:
            raise ValueError(
                f"{label}[{i}] window starts at {ts.window[0]}, expected {expected} "
                "(windows must chain from 0)"
            )
        expected = ts.window[1]


@dataclass(frozen=True)
class RASProblem:
    """Timed targets and obstacles, permanent obstacle, and POI data."""

    system: ControlAffineSystem
    targets: tuple
    timed_obstacles: tuple = ()
    all_time_obstacle: ShapeExpr | None = None
    poi: Array = None
    poi_dims: tuple | None = None
    gamma: float = 0.1
    gamma_hat: float = 0.0
    delta: float = 0.01
    t_stab_max: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "timed_obstacles", tuple(self.timed_obstacles))
        object.__setattr__(self, "poi", np.asarray(self.poi, dtype=float))
        if self.poi_dims is not None:
            object.__setattr__(self, "poi_dims", tuple(int(d) for d in self.poi_dims))
        if not self.targets:
            raise ValueError("at least one timed target is required")
        _check_chained(self.targets, "targets")
        _check_chained(self.timed_obstacles, "timed_obstacles")
        if self.delta <= 0:
            raise ValueError("hold step delta must be > 0")
        if not 0 <= self.gamma_hat < self.gamma:
            raise ValueError("gamma_hat must satisfy 0 <= gamma_hat < gamma")
        for label, entries in (("targets", self.targets), ("timed_obstacles", self.timed_obstacles)):
            for i, ts in enumerate(entries):
                for edge in ts.window:
                    ratio = edge / self.delta
                    if abs(ratio - round(ratio)) > 1e-6:
                        raise ValueError(
                            f"{label}[{i}] window edge {edge} is not a multiple of delta={self.delta}"
                        )

    @property
    def t_reach_last(self) -> float:
        return self.targets[-1].deadline

    @property
    def stabilize_cap(self) -> float:
        return self.t_stab_max if self.t_stab_max is not None else 5.0 * self.t_reach_last


@dataclass
class Trajectory:
    """Sample-and-hold rollout with held controls and realized disturbances."""

    times: Array
    states: Array
    controls: Array
    disturbances: Array
    phases: Array
    termination: str  # entered_im | rejected | domain_exit
    reason: str | None
    end_time: float
    seed_index: int = 0

    @property
    def final_state(self) -> Array:
        return self.states[-1]


@dataclass
class VerifyResult:
    passed: bool
    failures: list = field(default_factory=list)  # (kind, index, time)

    def __bool__(self):
        return self.passed


@dataclass
class DecayAuditReport:
    n_pairs: int
    n_violations: int
    fraction_decaying: float
    passed: bool


@dataclass
class RASResult:
    seeds: Array
    mask: Array
    codes: Array
    steps_used: Array
    end_times: Array
    total_iterations: int
    wall_time: float
    a_star: float
    trajectories: list | None = None

    @property
    def accepted_count(self) -> int:
        return int(self.mask.sum())

    def reason(self, i: int) -> str:
        return CODE_NAMES[int(self.codes[i])]


@dataclass
class PrecomputedFields:
    """Solver outputs consumed by the rollout engine."""

    reach: tuple
    timed_avoid: tuple
    converged_avoid: ScalarField | None
    rclvf: ValueSnapshots

    def validate(self, prob: RASProblem) -> None:
        grid = self.rclvf.grid
        if self.rclvf.kind != "rclvf":
            raise ValueError("rclvf snapshots have the wrong kind")
        if len(self.reach) != len(prob.targets):
            raise ValueError(
                f"{len(prob.targets)} targets but {len(self.reach)} reach snapshot stacks"
            )
        if len(self.timed_avoid) != len(prob.timed_obstacles):
            raise ValueError("timed obstacle / avoid snapshot count mismatch")
        for label, stacks, entries, kind in (
            ("reach", self.reach, prob.targets, "reach"),
            ("timed_avoid", self.timed_avoid, prob.timed_obstacles, "avoid"),
        ):
            for i, (snaps, ts) in enumerate(zip(stacks, entries)):
                if snaps.kind != kind:
                    raise ValueError(f"{label}[{i}] has kind {snaps.kind}")
                span = ts.window[1] - ts.window[0]
                if snaps.horizon < span - 1e-9:
                    raise ValueError(
                        f"{label}[{i}] horizon {snaps.horizon} shorter than window span {span}"
                    )
                if not snaps.grid.compatible_with(grid):
                    raise ValueError(f"{label}[{i}] grid differs from the rclvf grid")
        if prob.all_time_obstacle is not None and self.converged_avoid is None:
            raise ValueError("problem has a permanent obstacle but no converged avoid field")
        if self.converged_avoid is not None and not self.converged_avoid.grid.compatible_with(grid):
            raise ValueError("converged avoid grid differs from the rclvf grid")


# ---------------------------------------------------------------------------
# Hold-step integration


def hold_step(
    sys: ControlAffineSystem,
    x,
    u,
    policy: DisturbancePolicy,
    active_grad_source,
    delta: float,
    grid: Grid | None = None,
    d_fixed: Array | None = None,
):
    """Integrate one hold interval with ``u`` constant.

    Classical 4-stage Runge-Kutta with internal step ``delta/4``;
    periodic dimensions wrap. ``active_grad_source`` maps a state batch
    to value gradients and feeds the worst-case disturbance policy at
    every stage. Returns ``(x_next, d_used, left_domain)``; ``d_used`` is
    the disturbance realized at the first stage.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    U = np.asarray(u, dtype=float)
    if U.ndim == 1:
        U = np.broadcast_to(U, (X.shape[0], U.shape[0]))
    if policy.mode == "worst_case_active" and sys.disturbance_dim and active_grad_source is None:
        raise ValueError("worst_case_active policy needs an active value-function gradient")
    X_next, d_used, oob = _hold_step_batch(
        sys, grid, X, U, policy.mode, active_grad_source, d_fixed, delta
    )
    if single:
        return X_next[0], d_used[0], bool(oob[0])
    return X_next, d_used, oob


def _disturbance_for(sys, mode, grad_fn, d_fixed, Xs):
    k = sys.disturbance_dim
    if k == 0:
        return np.zeros((Xs.shape[0], 0))
    if mode == "zero":
        return np.zeros((Xs.shape[0], k))
    if mode == "seeded_random":
        if d_fixed is None:
            raise ValueError("seeded_random policy needs the per-step disturbance draw")
        d = np.asarray(d_fixed, dtype=float)
        return np.broadcast_to(d, (Xs.shape[0], k)).copy() if d.ndim == 1 else d
    if grad_fn is None:
        return np.zeros((Xs.shape[0], k))
    grad = grad_fn(Xs)
    pE = np.einsum("an,ank->ak", grad, sys.E(Xs))
    lo, hi = sys.disturbance_box[:, 0], sys.disturbance_box[:, 1]
    mid = 0.5 * (lo + hi)
    return np.where(pE > 0, hi, np.where(pE < 0, lo, mid))


def _hold_step_batch(sys, grid, X, U, mode, grad_fn, d_fixed, delta):
    h = delta / 4.0
    x = X.copy()
    d_used = None
    oob = np.zeros(X.shape[0], dtype=bool)

    def rhs(xs, d):
        out = sys.f(xs) + np.einsum("anm,am->an", sys.g(xs), U)
        if sys.disturbance_dim:
            out = out + np.einsum("ank,ak->an", sys.E(xs), d)
        return out

    def stage_d(xs):
        return _disturbance_for(sys, mode, grad_fn, d_fixed, xs)

    for _ in range(4):
        d1 = stage_d(x)
        if d_used is None:
            d_used = d1
        k1 = rhs(x, d1)
        x2 = x + 0.5 * h * k1
        k2 = rhs(x2, stage_d(x2))
        x3 = x + 0.5 * h * k2
        k3 = rhs(x3, stage_d(x3))
        x4 = x + h * k3
        k4 = rhs(x4, stage_d(x4))
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if grid is not None:
            x = grid.wrap(x)
            for dim in range(grid.ndim):
                if not grid.periodic[dim]:
                    oob |= (x[:, dim] < grid.lo[dim]) | (x[:, dim] > grid.hi[dim])
    return x, d_used, oob


# ---------------------------------------------------------------------------
# Stabilize-phase stopping level


def _interior_mask(grid: Grid, frame: int = 2) -> Array:
    """Nodes at least ``frame`` cells from every non-periodic boundary.

    Extrapolating boundary conditions contaminate a frame of cells, so
    level statistics exclude it.
    """
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


def compute_I_M(
    v_rclvf: ValueSnapshots, c_field: ScalarField | None, tol_level: float | None = None
) -> float:
    """Largest stabilization sublevel not touching the permanent obstacle.

    Returns the level ``a*``: the minimum stabilization value over
    obstacle nodes minus one zero-band margin, or the largest uncapped
    value when no obstacle node exists. Boundary-frame nodes are ignored
    on both sides of the comparison.
    """
    values = v_rclvf.stack[-1]
    capped = v_rclvf.capped_mask()
    tol = v_rclvf.grid.tol_level if tol_level is None else float(tol_level)
    interior = _interior_mask(v_rclvf.grid)
    obstacle_nodes = None
    if c_field is not None:
        if not c_field.grid.compatible_with(v_rclvf.grid):
            raise ValueError("obstacle field grid differs from the stabilization grid")
        obstacle_nodes = (c_field.values >= 0) & interior
    if obstacle_nodes is None or not obstacle_nodes.any():
        usable = values[~capped & interior]
        if usable.size == 0:
            raise StabilizeRegionUnusableError("every node is outside the stabilizable domain")
        return float(usable.max())
    a_star = float(values[obstacle_nodes].min()) - tol
    if not (values[interior] <= a_star).any():
        raise StabilizeRegionUnusableError(
            "the permanent obstacle touches every stabilization sublevel set"
        )
    return a_star


# ---------------------------------------------------------------------------
# Vectorized rollout engine


class _GradCache:
    """Per-slice central-difference stacks, keeping the last few slices."""

    def __init__(self, grid: Grid, keep: int = 4):
        self.grid = grid
        self.keep = keep
        self._store: dict = {}

    def get(self, tag, k: int, values: Array) -> Array:
        key = (tag, k)
        if key not in self._store:
            if len(self._store) >= self.keep:
                self._store.pop(next(iter(self._store)))
            self._store[key] = central_difference_stack(ScalarField(self.grid, values))
        return self._store[key]


class _FactorResult:
    __slots__ = ("status", "a", "b", "strict")

    def __init__(self, status, a, b, strict):
        self.status = status  # per row: 0 full box, 1 constrained, 2 infeasible
        self.a = a  # (n_constrained_rows, m)
        self.b = b  # (n_constrained_rows,)
        self.strict = strict


class _Engine:
    def __init__(self, prob: RASProblem, pre: PrecomputedFields, policy, rng_key, tol_level=None):
        pre.validate(prob)
        self.prob = prob
        self.pre = pre
        self.policy = policy
        self.rng_key = int(rng_key)
        self.sys = prob.system
        self.grid = pre.rclvf.grid
        self.tol = self.grid.tol_level if tol_level is None else float(tol_level)
        self.periods = grid_periods(self.grid)
        self.m = self.sys.control_dim
        if self.m > acs_mod.MAX_CONTROL_DIM:
            raise ValueError(f"control_dim <= {acs_mod.MAX_CONTROL_DIM} supported")
        self.u_lo = self.sys.control_box[:, 0]
        self.u_hi = self.sys.control_box[:, 1]
        self.eps_strict = acs_mod.eps_strict(self.sys.control_box)
        # Feasibility slack for non-strict decay constraints: where the
        # control coefficient nearly vanishes (steering cannot influence
        # the value instantaneously) the continuum constraint balances at
        # exactly zero and discretization noise in b would reject sound
        # seeds. Allowing the value to creep by one band width per unit
        # time is harmless: the trichotomy still rejects any trajectory
        # that actually leaves the band, and accepted seeds must pass
        # full verification regardless.
        self.decay_slack = self.tol
        self.grads = _GradCache(self.grid)
        self.rclvf_values = pre.rclvf.stack[-1]
        self.rclvf_grad = central_difference_stack(ScalarField(self.grid, self.rclvf_values))
        self.capped = pre.rclvf.capped_mask().astype(float)
        if pre.converged_avoid is not None:
            self.ca_values = pre.converged_avoid.values
            self.ca_grad = central_difference_stack(pre.converged_avoid)
        else:
            self.ca_values = None
            self.ca_grad = None
        c_raster = (
            rasterize_obstacle(prob.all_time_obstacle, self.grid)
            if prob.all_time_obstacle is not None
            else None
        )
        self.a_star = compute_I_M(pre.rclvf, c_raster, tol_level=self.tol)
        self.n_reach_steps = int(round(prob.t_reach_last / prob.delta))
        if abs(self.n_reach_steps * prob.delta - prob.t_reach_last) > 1e-6:
            raise ValueError("last reach deadline is not a multiple of delta")
        self.max_stab_steps = int(math.ceil(prob.stabilize_cap / prob.delta)) + 1

    # -- field evaluation helpers

    def _gather(self, values, i0, w):
        return _gather_corners(self.grid, values, i0, w)

    def _grad_rows(self, grad_stack, i0, w):
        return np.stack(
            [self._gather(grad_stack[d], i0, w) for d in range(self.grid.ndim)], axis=-1
        )

    def _select_timed(self, entries, s):
        """Index of the first entry whose deadline has not passed."""
        eps = 1e-9 * max(1.0, self.prob.t_reach_last)
        for idx, ts in enumerate(entries):
            if s <= ts.deadline + eps:
                return idx
        return None

    def _halfspace_rows(self, X_rows, grad_rows, dvdtau, gamma_hat_v):
        """Decay half-space coefficients (a, b) for constrained rows.

        ``dvdtau`` is the time-to-go derivative of the stored stack,
        which equals minus the forward-time derivative of the value.
        """
        f = self.sys.f(X_rows)
        if self.sys.disturbance_dim:
            E = self.sys.E(X_rows)
            pE = np.einsum("an,ank->ak", grad_rows, E)
            lo, hi = self.sys.disturbance_box[:, 0], self.sys.disturbance_box[:, 1]
            mid = 0.5 * (lo + hi)
            d_star = np.where(pE > 0, hi, np.where(pE < 0, lo, mid))
            f = f + np.einsum("ank,ak->an", E, d_star)
        a = np.einsum("an,anm->am", grad_rows, self.sys.g(X_rows))
        b = dvdtau - np.einsum("an,an->a", grad_rows, f) - gamma_hat_v
        return a, b

    def _timed_factor(self, snaps: ValueSnapshots, tag, tau, X, i0, w):
        k = snaps.time_index(tau)
        v = self._gather(snaps.stack[k], i0, w)
        status = np.zeros(len(v), dtype=np.int8)
        status[v > self.tol] = 2
        band = np.abs(v) <= self.tol
        status[band] = 1
        a = b = None
        if band.any():
            rows = np.flatnonzero(band)
            k_hi, k_lo = (k, k - 1) if k >= 1 else (1, 0)
            v_hi = self._gather(snaps.stack[k_hi], i0[rows], w[rows])
            v_lo = self._gather(snaps.stack[k_lo], i0[rows], w[rows])
            dvdtau = (v_hi - v_lo) / (snaps.times[k_hi] - snaps.times[k_lo])
            grad_rows = self._grad_rows(self.grads.get(tag, k, snaps.stack[k]), i0[rows], w[rows])
            a, b = self._halfspace_rows(X[rows], grad_rows, dvdtau, 0.0)
            b = b + self.decay_slack
        return _FactorResult(status, a, b, False)

    def _converged_factor(self, X, i0, w):
        v = self._gather(self.ca_values, i0, w)
        status = np.zeros(len(v), dtype=np.int8)
        status[v > self.tol] = 2
        band = np.abs(v) <= self.tol
        status[band] = 1
        a = b = None
        if band.any():
            rows = np.flatnonzero(band)
            grad_rows = self._grad_rows(self.ca_grad, i0[rows], w[rows])
            a, b = self._halfspace_rows(X[rows], grad_rows, 0.0, 0.0)
            b = b + self.decay_slack
        return _FactorResult(status, a, b, False)

    def _stabilize_factor(self, X, i0, w):
        cap_touch = self._gather(self.capped, i0, w)
        status = np.ones(len(cap_touch), dtype=np.int8)  # constrained everywhere inside
        status[cap_touch > 1e-12] = 2
        rows = np.flatnonzero(status == 1)
        a = b = None
        if rows.size:
            v_rows = self._gather(self.rclvf_values, i0[rows], w[rows])
            grad_rows = self._grad_rows(self.rclvf_grad, i0[rows], w[rows])
            a, b = self._halfspace_rows(X[rows], grad_rows, 0.0, self.prob.gamma_hat * v_rows)
        return _FactorResult(status, a, b, True)

    @staticmethod
    def _fold_interval(L, U, factor, eps_strict, hard_code, fcode):
        """Fold one factor into per-row control intervals (scalar control)."""
        hit = (factor.status == 2) & (hard_code == 0)
        hard_code[hit] = fcode
        if factor.a is None:
            return
        rows = np.flatnonzero(factor.status == 1)
        eff = eps_strict if factor.strict else 0.0
        a = factor.a[:, 0]
        b = factor.b - eff
        pos = a > 0
        neg = a < 0
        zero_bad = ~pos & ~neg & (b < 0)
        np.minimum.at(U, rows[pos], b[pos] / a[pos])
        np.maximum.at(L, rows[neg], b[neg] / a[neg])
        bad = rows[zero_bad]
        hard_code[bad[hard_code[bad] == 0]] = fcode

    def _active_grad_fn(self, in_reach, s):
        if self.policy.mode != "worst_case_active" or self.sys.disturbance_dim == 0:
            return None
        if in_reach:
            j = self._select_timed(self.prob.targets, s)
            snaps = self.pre.reach[j]
            k = snaps.time_index(self.prob.targets[j].deadline - s)
            stack = self.grads.get(("reach", j), k, snaps.stack[k])
        else:
            stack = self.rclvf_grad

        def grad_fn(Xq):
            Xq = np.clip(self.grid.wrap(Xq), self.grid.lo, self.grid.hi)
            i0, w, _ = _locate(self.grid, Xq)
            return self._grad_rows(stack, i0, w)

        return grad_fn

    # -- main rollout over one chunk of seeds

    def run_chunk(self, seeds, seed_indices, record):
        prob = self.prob
        sys = self.sys
        delta = prob.delta
        N = len(seeds)
        X = self.grid.wrap(np.array(seeds, dtype=float))
        alive = np.ones(N, dtype=bool)
        code = np.full(N, R_PENDING, dtype=np.int8)
        steps_used = np.zeros(N, dtype=np.int64)
        end_times = np.zeros(N, dtype=float)
        entered = np.zeros(N, dtype=bool)
        n_targets = len(prob.targets)
        n_tobs = len(prob.timed_obstacles)
        reached = np.zeros((n_targets, N), dtype=bool)
        t_violated = np.zeros((n_tobs, N), dtype=bool)
        always_violated = np.zeros(N, dtype=bool)
        rec_states = [X.copy()] if record else None
        rec_controls = [] if record else None
        rec_dstb = [] if record else None
        rec_phases = [] if record else None

        def sample_checks(s, states, active_mask):
            eps = 1e-9 * max(1.0, prob.t_reach_last)
            for i, ts in enumerate(prob.targets):
                if ts.window[0] - eps <= s <= ts.window[1] + eps:
                    vals = ts.shape.evaluate(states, self.periods)
                    reached[i] |= active_mask & (vals <= 0)
            for j, ts in enumerate(prob.timed_obstacles):
                if ts.window[0] - eps <= s <= ts.window[1] + eps:
                    vals = ts.shape.evaluate(states, self.periods)
                    t_violated[j] |= active_mask & (vals <= 0)
            if prob.all_time_obstacle is not None:
                vals = prob.all_time_obstacle.evaluate(states, self.periods)
                always_violated[:] |= active_mask & (vals <= 0)

        # initial rejections: off-grid seeds, then seeds that cannot keep
        # avoiding the permanent obstacle
        i0, w, oob0 = _locate(self.grid, X)
        if oob0.any():
            code[oob0] = R_DOMAIN_EXIT
            alive &= ~oob0
        if self.ca_values is not None:
            v0 = self._gather(self.ca_values, i0, w)
            bad = alive & (v0 > self.tol)
            code[bad] = R_INITIAL_UNSAFE
            alive &= ~bad
        sample_checks(0.0, X, alive)

        iterations = 0
        q = 0
        total_steps = self.n_reach_steps + 1 + self.max_stab_steps
        while q < total_steps:
            s = q * delta
            in_reach = q <= self.n_reach_steps
            phase = PHASE_REACH if in_reach else PHASE_STABILIZE
            if not in_reach:
                act_head = np.flatnonzero(alive & ~entered)
                if act_head.size:
                    i0h, wh, _ = _locate(self.grid, X[act_head])
                    v = self._gather(self.rclvf_values, i0h, wh)
                    now_in = act_head[v <= self.a_star]
                    entered[now_in] = True
                    end_times[now_in] = s
                    steps_used[now_in] = q
                remaining = alive & ~entered
                if not remaining.any():
                    break
                if s - prob.t_reach_last > prob.stabilize_cap + 1e-9:
                    code[remaining] = R_STABILIZE_TIMEOUT
                    end_times[remaining] = s
                    steps_used[remaining] = q
                    alive &= ~remaining
                    break

            act = np.flatnonzero(alive & ~entered)
            u_all = np.zeros((N, self.m))
            d_all = np.zeros((N, sys.disturbance_dim))
            raw_states = None
            if act.size:
                iterations += 1
                Xa = X[act]
                i0a, wa, _ = _locate(self.grid, Xa)
                hard_code = np.zeros(act.size, dtype=np.int8)
                L = np.full(act.size, self.u_lo[0])
                U = np.full(act.size, self.u_hi[0])
                row_constraints = [[] for _ in range(act.size)] if self.m > 1 else None

                factors = []
                if in_reach:
                    j = self._select_timed(prob.targets, s)
                    tau = prob.targets[j].deadline - s
                    factors.append(
                        (
                            self._timed_factor(self.pre.reach[j], ("reach", j), tau, Xa, i0a, wa),
                            R_REACH_INFEASIBLE,
                        )
                    )
                kk = self._select_timed(prob.timed_obstacles, s) if n_tobs else None
                if kk is not None:
                    tau_a = prob.timed_obstacles[kk].deadline - s
                    factors.append(
                        (
                            self._timed_factor(
                                self.pre.timed_avoid[kk], ("avoid", kk), tau_a, Xa, i0a, wa
                            ),
                            R_TIMED_AVOID_INFEASIBLE,
                        )
                    )
                if not in_reach:
                    factors.append((self._stabilize_factor(Xa, i0a, wa), R_STABILIZE_OUTSIDE_DOMAIN))
                if self.ca_values is not None:
                    factors.append((self._converged_factor(Xa, i0a, wa), R_CONVERGED_AVOID_INFEASIBLE))

                row_acs = None
                if self.m == 1:
                    for factor, fcode in factors:
                        self._fold_interval(L, U, factor, self.eps_strict, hard_code, fcode)
                    empty = (hard_code == 0) & (L > U)
                    hard_code[empty] = R_EMPTY_INTERSECTION
                else:
                    row_acs = [None] * act.size
                    for factor, fcode in factors:
                        hit = (factor.status == 2) & (hard_code == 0)
                        hard_code[hit] = fcode
                        if factor.a is not None:
                            for li, row in enumerate(np.flatnonzero(factor.status == 1)):
                                row_constraints[row].append(
                                    acs_mod.HalfSpace(factor.a[li], factor.b[li], factor.strict)
                                )
                    for row in range(act.size):
                        if hard_code[row] == 0 and row_constraints[row]:
                            built = acs_mod.constrained(sys.control_box, row_constraints[row])
                            if built.status == acs_mod.INFEASIBLE:
                                hard_code[row] = R_EMPTY_INTERSECTION
                            else:
                                row_acs[row] = built

                bad_rows = np.flatnonzero(hard_code != 0)
                if bad_rows.size:
                    ridx = act[bad_rows]
                    code[ridx] = hard_code[bad_rows]
                    end_times[ridx] = s
                    steps_used[ridx] = q
                    alive[ridx] = False
                keep_rows = np.flatnonzero(hard_code == 0)
                act = act[keep_rows]

                if act.size:
                    if self.m == 1:
                        eta = rng_mod.counter_uniform(
                            self.rng_key, rng_mod.CONTROL_STREAM, seed_indices[act], q
                        )
                        Lk = L[keep_rows]
                        Uk = U[keep_rows]
                        u_all[act, 0] = Lk + eta * (Uk - Lk)
                    else:
                        eta = np.stack(
                            [
                                rng_mod.counter_uniform(
                                    self.rng_key, rng_mod.CONTROL_STREAM + mj, seed_indices[act], q
                                )
                                for mj in range(self.m)
                            ],
                            axis=-1,
                        )
                        u_all[act] = self.u_lo + eta * (self.u_hi - self.u_lo)
                        for li, row in enumerate(keep_rows):
                            if row_acs[row] is not None:
                                gen = np.random.Generator(
                                    np.random.Philox(
                                        seed=np.random.SeedSequence(
                                            (self.rng_key, int(seed_indices[act[li]]), q)
                                        )
                                    )
                                )
                                u_all[act[li]] = acs_mod.sample(row_acs[row], gen)

                    d_fixed = None
                    if self.policy.mode == "seeded_random" and sys.disturbance_dim:
                        draws = np.stack(
                            [
                                rng_mod.counter_uniform(
                                    self.rng_key,
                                    rng_mod.DISTURBANCE_STREAM + kj,
                                    seed_indices[act],
                                    q,
                                )
                                for kj in range(sys.disturbance_dim)
                            ],
                            axis=-1,
                        )
                        d_fixed = sys.disturbance_box[:, 0] + draws * (
                            sys.disturbance_box[:, 1] - sys.disturbance_box[:, 0]
                        )

                    grad_fn = self._active_grad_fn(in_reach, s)
                    X_new, d_used, oob = _hold_step_batch(
                        sys, self.grid, X[act], u_all[act], self.policy.mode, grad_fn, d_fixed, delta
                    )
                    if sys.disturbance_dim and d_used is not None:
                        d_all[act] = d_used
                    exited = np.flatnonzero(oob)
                    if exited.size:
                        eidx = act[exited]
                        code[eidx] = R_DOMAIN_EXIT
                        end_times[eidx] = s + delta
                        steps_used[eidx] = q + 1
                        alive[eidx] = False
                    if record:
                        raw_states = X.copy()
                        raw_states[act] = X_new
                    X[act] = np.clip(X_new, self.grid.lo, self.grid.hi)
                    moved = act[~oob]
                    steps_used[moved] = q + 1
                    sample_checks(s + delta, X, _mask_from(N, moved))

            if record:
                rec_states.append(raw_states if raw_states is not None else X.copy())
                rec_controls.append(u_all)
                rec_dstb.append(d_all)
                rec_phases.append(np.full(N, phase, dtype=np.int8))
            if not in_reach and not (alive & ~entered).any():
                break
            q += 1

        stale = alive & ~entered
        if stale.any():
            code[stale] = R_STABILIZE_TIMEOUT
            end_times[stale] = q * delta
            steps_used[stale] = np.minimum(steps_used[stale], q)
            alive &= ~stale

        verify_ok = reached.all(axis=0) & ~t_violated.any(axis=0) & ~always_violated
        fail_verify = entered & ~verify_ok
        code[fail_verify] = R_VERIFY_FAILED
        ok = entered & verify_ok
        code[ok] = ACCEPTED
        if (code == R_PENDING).any():
            raise RuntimeError("internal error: seeds left without a final code")

        trajectories = None
        if record:
            trajectories = self._build_trajectories(
                N, seed_indices, rec_states, rec_controls, rec_dstb, rec_phases,
                steps_used, code, end_times, delta,
            )
        return ok, code, steps_used, end_times, iterations, trajectories

    def _build_trajectories(
        self, N, seed_indices, states, controls, dstbs, phases, steps_used, code, end_times, delta
    ):
        S = np.stack(states)
        Cs = np.stack(controls) if controls else np.zeros((0, N, self.m))
        Ds = np.stack(dstbs) if dstbs else np.zeros((0, N, self.sys.disturbance_dim))
        Ph = np.stack(phases) if phases else np.zeros((0, N), dtype=np.int8)
        out = []
        for i in range(N):
            n_steps = int(steps_used[i])
            ci = int(code[i])
            if ci in (ACCEPTED, R_VERIFY_FAILED):
                termination = "entered_im"
            elif ci == R_DOMAIN_EXIT:
                termination = "domain_exit"
            else:
                termination = "rejected"
            out.append(
                Trajectory(
                    times=np.arange(n_steps + 1) * delta,
                    states=S[: n_steps + 1, i].copy(),
                    controls=Cs[:n_steps, i].copy(),
                    disturbances=Ds[:n_steps, i].copy(),
                    phases=Ph[:n_steps, i].copy(),
                    termination=termination,
                    reason=CODE_NAMES.get(ci, "pending"),
                    end_time=float(end_times[i]),
                    seed_index=int(seed_indices[i]),
                )
            )
        return out


def _mask_from(n, idx):
    m = np.zeros(n, dtype=bool)
    m[idx] = True
    return m


def ras_underapprox(
    prob: RASProblem,
    pre: PrecomputedFields,
    seeds: Array | None = None,
    rng_seed: int = 0,
    policy: DisturbancePolicy = DisturbancePolicy(),
    workers: int = 1,
    record_trajectories: bool = False,
    seed_indices: Array | None = None,
    tol_level: float | None = None,
) -> RASResult:
    """Forward-propagate seeds through the two-block rollout.

    ``seeds`` defaults to every grid node. The returned mask marks seeds
    whose rollout entered the stabilization stopping set and passed all
    sample-based problem checks; everything else carries its rejection
    code in the audit arrays. Fixing ``rng_seed`` fixes the result
    bit-for-bit regardless of ``workers``.
    """
    t0 = _time.perf_counter()
    engine = _Engine(prob, pre, policy, rng_seed, tol_level=tol_level)
    if seeds is None:
        seeds = engine.grid.points()
    seeds = np.asarray(seeds, dtype=float)
    if seed_indices is None:
        seed_indices = np.arange(len(seeds), dtype=np.int64)
    else:
        seed_indices = np.asarray(seed_indices, dtype=np.int64)
        if seed_indices.shape != (len(seeds),):
            raise ValueError("seed_indices must align with seeds")

    if workers <= 1 or len(seeds) < 2 * workers:
        chunks = [(0, len(seeds))]
    else:
        bound = math.ceil(len(seeds) / workers)
        chunks = [(i, min(i + bound, len(seeds))) for i in range(0, len(seeds), bound)]

    def run(span):
        lo, hi = span
        return engine.run_chunk(seeds[lo:hi], seed_indices[lo:hi], record_trajectories)

    if len(chunks) == 1:
        results = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, chunks))

    N = len(seeds)
    mask = np.zeros(N, dtype=bool)
    codes = np.zeros(N, dtype=np.int8)
    steps = np.zeros(N, dtype=np.int64)
    ends = np.zeros(N, dtype=float)
    iterations = 0
    trajectories = [] if record_trajectories else None
    for (lo, hi), (ok, code, su, et, iters, trajs) in zip(chunks, results):
        mask[lo:hi] = ok
        codes[lo:hi] = code
        steps[lo:hi] = su
        ends[lo:hi] = et
        iterations = max(iterations, iters)
        if record_trajectories:
            trajectories.extend(trajs)
    return RASResult(
        seeds=seeds,
        mask=mask,
        codes=codes,
        steps_used=steps,
        end_times=ends,
        total_iterations=iterations,
        wall_time=_time.perf_counter() - t0,
        a_star=engine.a_star,
        trajectories=trajectories,
    )


# ---------------------------------------------------------------------------
# Post-hoc verification and audits


def verify_trajectory(
    traj: Trajectory,
    prob: RASProblem,
    v_rclvf: ValueSnapshots,
    a_star: float,
) -> VerifyResult:
    """Check a completed trajectory against the problem definition.

    Direct evaluation of the shape functions along the samples: every
    timed target must be hit inside its window, no sample may sit inside
    a timed obstacle during its window or inside the permanent obstacle,
    and the final state must lie in the stabilization stopping set.
    """
    failures = []
    periods = grid_periods(v_rclvf.grid)
    eps = 1e-9 * max(1.0, prob.t_reach_last)
    if traj.termination != "entered_im":
        failures.append(("not_completed", None, float(traj.end_time)))
    times = traj.times
    states = traj.states
    for i, ts in enumerate(prob.targets):
        inside = (times >= ts.window[0] - eps) & (times <= ts.window[1] + eps)
        if not inside.any() or not (ts.shape.evaluate(states[inside], periods) <= 0).any():
            failures.append(("reach", i, float(ts.deadline)))
    for j, ts in enumerate(prob.timed_obstacles):
        inside = (times >= ts.window[0] - eps) & (times <= ts.window[1] + eps)
        vals = ts.shape.evaluate(states[inside], periods)
        if (vals <= 0).any():
            failures.append(("avoid", j, float(times[inside][vals <= 0][0])))
    if prob.all_time_obstacle is not None:
        vals = prob.all_time_obstacle.evaluate(states, periods)
        if (vals <= 0).any():
            failures.append(("avoid_all_time", None, float(times[vals <= 0][0])))
    v_final = interpolate(v_rclvf.final_field(), v_rclvf.grid.wrap(traj.final_state))
    if v_final > a_star + 1e-9:
        failures.append(("stabilize", None, float(times[-1])))
    return VerifyResult(passed=not failures, failures=failures)


def lyapunov_decay_audit(
    traj: Trajectory,
    v_rclvf: ValueSnapshots,
    gamma_hat: float = 0.0,
    tol_level: float | None = None,
) -> DecayAuditReport:
    """Check stabilization-value decay across stabilize-phase hold steps.

    Consecutive samples whose first value sits above the zero band must
    decrease (contract by ``1 - gamma_hat * delta`` in the exponential
    case); one interpolation-induced violation per trajectory is allowed.
    """
    grid = v_rclvf.grid
    tol = grid.tol_level if tol_level is None else tol_level
    stab = np.flatnonzero(traj.phases == PHASE_STABILIZE)
    if stab.size == 0:
        return DecayAuditReport(0, 0, 1.0, True)
    vals, _ = interpolate_many(v_rclvf.final_field(), grid.wrap(traj.states))
    delta = float(traj.times[1] - traj.times[0]) if traj.times.size > 1 else 0.0
    n_pairs = 0
    n_viol = 0
    for i in stab:
        v0, v1 = vals[i], vals[i + 1]
        if v0 <= tol:
            continue
        n_pairs += 1
        bound = v0 if gamma_hat == 0.0 else (1.0 - gamma_hat * delta) * v0
        if not v1 < bound:
            n_viol += 1
    frac = 1.0 if n_pairs == 0 else (n_pairs - n_viol) / n_pairs
    return DecayAuditReport(n_pairs, n_viol, frac, n_viol <= 1)
