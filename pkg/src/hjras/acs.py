"""Admissible control sets derived from value-function data.

An ACS is the control box intersected with half-space constraints
``a.u <= b`` (strict variants keep a small margin ``eps_strict``). The
trichotomy for value-based sets uses the grid's numerical zero band
``tol_level``: well inside the certified region the whole box is
admissible, inside the band one value-decay half-space applies, and
beyond it no control is admissible.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .dynamics import ControlAffineSystem, optimal_disturbance
from .grids import ScalarField, central_difference_stack, interpolate, _gather_corners, _locate
from .solver import ValueSnapshots

Array = np.ndarray

FULL_BOX = "full_box"
CONSTRAINED = "constrained"
INFEASIBLE = "infeasible"

MAX_CONTROL_DIM = 4


@dataclass(frozen=True)
class HalfSpace:
    """Constraint ``normal . u <= offset`` (strictly, if ``strict``)."""

    normal: Array
    offset: float
    strict: bool = False

    def __post_init__(self):
        normal = np.atleast_1d(np.asarray(self.normal, dtype=float))
        if not np.all(np.isfinite(normal)) or not np.isfinite(self.offset):
            raise ValueError("half-space coefficients must be finite")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))


@dataclass(frozen=True)
class AdmissibleControlSet:
    status: str
    box: Array
    constraints: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "box", np.asarray(self.box, dtype=float).reshape(-1, 2))
        if self.status not in (FULL_BOX, CONSTRAINED, INFEASIBLE):
            raise ValueError(f"unknown status {self.status!r}")
        if self.status != CONSTRAINED and self.constraints:
            raise ValueError(f"{self.status} sets carry no constraints")

    @property
    def control_dim(self) -> int:
        return self.box.shape[0]


def eps_strict(box: Array) -> float:
    """Margin turning strict inequalities into checkable closed ones."""
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    return 1e-6 * float(np.linalg.norm(box[:, 1] - box[:, 0]))


def full_box(box) -> AdmissibleControlSet:
    return AdmissibleControlSet(FULL_BOX, box)


def infeasible(box) -> AdmissibleControlSet:
    return AdmissibleControlSet(INFEASIBLE, box)


def constrained(box, constraints) -> AdmissibleControlSet:
    """Build a constrained set, normalizing empty ones to infeasible."""
    acs = AdmissibleControlSet(CONSTRAINED, box, tuple(constraints))
    if not acs.constraints:
        return full_box(box)
    if is_empty(acs):
        return infeasible(box)
    return acs


# ---------------------------------------------------------------------------
# Geometry


def _effective_offsets(acs: AdmissibleControlSet) -> list[tuple[Array, float]]:
    eps = eps_strict(acs.box)
    return [(hs.normal, hs.offset - (eps if hs.strict else 0.0)) for hs in acs.constraints]


def feasible_interval(acs: AdmissibleControlSet) -> tuple[float, float] | None:
    """Exact feasible interval for scalar controls; None when empty."""
    if acs.control_dim != 1:
        raise ValueError("feasible_interval applies to scalar controls only")
    if acs.status == INFEASIBLE:
        return None
    lo, hi = float(acs.box[0, 0]), float(acs.box[0, 1])
    for normal, offset in _effective_offsets(acs):
        a = float(normal[0])
        if a > 0:
            hi = min(hi, offset / a)
        elif a < 0:
            lo = max(lo, offset / a)
        elif offset < 0:
            return None
    return (lo, hi) if lo <= hi else None


def _vertex_candidates(acs: AdmissibleControlSet):
    """Vertices of {u in box : a.u <= b_eff} by plane enumeration (m <= 4)."""
    m = acs.control_dim
    planes = [(n, b) for n, b in _effective_offsets(acs)]
    for j in range(m):
        e = np.zeros(m)
        e[j] = 1.0
        planes.append((e, float(acs.box[j, 1])))
        planes.append((-e, -float(acs.box[j, 0])))
    verts = []
    for combo in itertools.combinations(range(len(planes)), m):
        A = np.stack([planes[i][0] for i in combo])
        b = np.array([planes[i][1] for i in combo])
        try:
            u = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            continue
        verts.append(u)
    return planes, verts


def _feasible_vertices(acs: AdmissibleControlSet) -> list[Array]:
    planes, verts = _vertex_candidates(acs)
    scale = 1.0 + float(np.abs(acs.box).max())
    tol = 1e-9 * scale
    out = []
    for u in verts:
        if all(float(n @ u) <= b + tol for n, b in planes):
            out.append(np.clip(u, acs.box[:, 0], acs.box[:, 1]))
    return out


def is_empty(acs: AdmissibleControlSet) -> bool:
    """Exact emptiness test (interval for m=1, vertex enumeration m<=4)."""
    if acs.status == INFEASIBLE:
        return True
    if acs.status == FULL_BOX or not acs.constraints:
        return False
    m = acs.control_dim
    if m == 1:
        return feasible_interval(acs) is None
    if m > MAX_CONTROL_DIM:
        raise ValueError(f"emptiness testing supports control_dim <= {MAX_CONTROL_DIM}")
    return not _feasible_vertices(acs)


def intersect(sets) -> AdmissibleControlSet:
    """Intersection of ACSs sharing one control box."""
    sets = list(sets)
    if not sets:
        raise ValueError("intersect requires at least one set")
    box = sets[0].box
    for s in sets[1:]:
        if not np.allclose(s.box, box):
            raise ValueError("cannot intersect sets with different control boxes")
    if any(s.status == INFEASIBLE for s in sets):
        return infeasible(box)
    constraints = tuple(hs for s in sets for hs in s.constraints)
    if not constraints:
        return full_box(box)
    return constrained(box, constraints)


def sample(acs: AdmissibleControlSet, rng: np.random.Generator) -> Array:
    """Deterministic-in-rng-state sample from a non-empty ACS.

    Scalar controls sample uniformly on the feasible interval. Higher
    dimensions reject uniform box draws (cap 256) and fall back to the
    feasible polytope's vertex centroid.
    """
    if acs.status == INFEASIBLE:
        raise ValueError("cannot sample from an infeasible control set")
    lo, hi = acs.box[:, 0], acs.box[:, 1]
    if acs.status == FULL_BOX or not acs.constraints:
        return lo + rng.random(acs.control_dim) * (hi - lo)
    if acs.control_dim == 1:
        interval = feasible_interval(acs)
        if interval is None:
            raise ValueError("cannot sample from an infeasible control set")
        return np.array([interval[0] + rng.random() * (interval[1] - interval[0])])
    planes = _effective_offsets(acs)
    for _ in range(256):
        u = lo + rng.random(acs.control_dim) * (hi - lo)
        if all(float(n @ u) <= b for n, b in planes):
            return u
    verts = _feasible_vertices(acs)
    if not verts:
        raise ValueError("cannot sample from an infeasible control set")
    uniq = {tuple(np.round(v, 12)) for v in verts}
    return np.mean([np.array(v) for v in sorted(uniq)], axis=0)


# ---------------------------------------------------------------------------
# Value-function trichotomy builders


def _grad_at(field_values: Array, grid, x: Array) -> Array:
    stack = central_difference_stack(ScalarField(grid, field_values))
    i0, w, oob = _locate(grid, np.asarray(x, dtype=float))
    if np.any(oob):
        from .errors import DomainExit

        raise DomainExit(f"state {np.asarray(x).tolist()} outside grid bounds")
    return np.stack([_gather_corners(grid, stack[d], i0, w) for d in range(grid.ndim)], axis=-1)


def _decay_halfspace(
    sys: ControlAffineSystem,
    grid,
    x: Array,
    grad: Array,
    dV_dtau: float,
    gamma_hat_term: float = 0.0,
    strict: bool = False,
) -> HalfSpace:
    """Half-space of the value-decay constraint at one state.

    ``dV_dtau`` is the time-to-go derivative of the stored stack, which
    equals minus the forward-time derivative in the paper's constraint.
    """
    x = np.asarray(x, dtype=float)
    d_star = optimal_disturbance(sys, x, grad)
    drift = sys.f(x)
    if sys.disturbance_dim:
        drift = drift + sys.E(x) @ d_star
    a = grad @ sys.g(x)
    b = dV_dtau - float(grad @ drift) - gamma_hat_term
    return HalfSpace(a, b, strict=strict)


def _timed_value_acs(
    snaps: ValueSnapshots,
    sys: ControlAffineSystem,
    x,
    tau: float,
    expect_kind: str,
    tol_level: float | None,
) -> AdmissibleControlSet:
    if snaps.kind != expect_kind:
        raise ValueError(f"expected {expect_kind} snapshots, got {snaps.kind}")
    grid = snaps.grid
    tol = grid.tol_level if tol_level is None else tol_level
    k = snaps.time_index(tau)
    x = np.asarray(x, dtype=float)
    v = interpolate(snaps.field(k), x)
    if v < -tol:
        return full_box(sys.control_box)
    if v > tol:
        return infeasible(sys.control_box)
    k_hi, k_lo = (k, k - 1) if k >= 1 else (1, 0)
    if snaps.n_slices < 2:
        raise ValueError("time-dependent ACS needs at least two stored slices")
    v_hi = interpolate(snaps.field(k_hi), x)
    v_lo = interpolate(snaps.field(k_lo), x)
    dV_dtau = (v_hi - v_lo) / (snaps.times[k_hi] - snaps.times[k_lo])
    grad = _grad_at(snaps.stack[k], grid, x)
    return constrained(
        sys.control_box, [_decay_halfspace(sys, grid, x, grad, float(dV_dtau))]
    )


def reach_acs(
    snaps: ValueSnapshots,
    sys: ControlAffineSystem,
    x,
    tau: float,
    tol_level: float | None = None,
) -> AdmissibleControlSet:
    """Reach ACS at state ``x`` and time-to-go ``tau``."""
    return _timed_value_acs(snaps, sys, x, tau, "reach", tol_level)


def avoid_acs(
    snaps: ValueSnapshots,
    sys: ControlAffineSystem,
    x,
    tau: float,
    tol_level: float | None = None,
) -> AdmissibleControlSet:
    """Finite-horizon avoid ACS; same trichotomy as the reach case."""
    return _timed_value_acs(snaps, sys, x, tau, "avoid", tol_level)


def converged_avoid_acs(
    v_inf: ScalarField,
    sys: ControlAffineSystem,
    x,
    tol_level: float | None = None,
) -> AdmissibleControlSet:
    """Stationary avoid ACS from a converged value (no time term)."""
    grid = v_inf.grid
    tol = grid.tol_level if tol_level is None else tol_level
    x = np.asarray(x, dtype=float)
    v = interpolate(v_inf, x)
    if v < -tol:
        return full_box(sys.control_box)
    if v > tol:
        return infeasible(sys.control_box)
    grad = _grad_at(v_inf.values, grid, x)
    return constrained(sys.control_box, [_decay_halfspace(sys, grid, x, grad, 0.0)])


def stabilize_acs(
    v_rclvf: ValueSnapshots,
    sys: ControlAffineSystem,
    x,
    gamma_hat: float,
) -> AdmissibleControlSet:
    """Strict decay constraint of the stabilization value.

    ``gamma_hat`` must be strictly below the gamma used to compute the
    value; states touching capped nodes are outside the stabilizable
    domain and get an infeasible set.
    """
    if v_rclvf.kind != "rclvf":
        raise ValueError("stabilize_acs needs rclvf snapshots")
    if not 0 <= gamma_hat < v_rclvf.gamma:
        raise ValueError(
            f"gamma_hat must satisfy 0 <= gamma_hat < gamma ({v_rclvf.gamma}), got {gamma_hat}"
        )
    grid = v_rclvf.grid
    x = np.asarray(x, dtype=float)
    values = v_rclvf.stack[-1]
    capped = v_rclvf.capped_mask().astype(float)
    fld = ScalarField(grid, values)
    cap_touch, oob = _interp_pair(grid, capped, x)
    if np.any(oob):
        from .errors import DomainExit

        raise DomainExit(f"state {x.tolist()} outside grid bounds")
    if cap_touch > 1e-12:
        return infeasible(sys.control_box)
    v = interpolate(fld, x)
    grad = _grad_at(values, grid, x)
    return constrained(
        sys.control_box,
        [_decay_halfspace(sys, grid, x, grad, 0.0, gamma_hat_term=gamma_hat * v, strict=True)],
    )


def _interp_pair(grid, values, x):
    i0, w, oob = _locate(grid, np.asarray(x, dtype=float))
    return _gather_corners(grid, values, i0, w), oob
