"""Control- and disturbance-affine system models.

Systems have the form ``dx/ds = f(x) + g(x) u + E(x) d`` with ``u`` and
``d`` confined to axis-aligned boxes. Evaluators are vectorized: they
accept a single state ``(n,)`` or a batch ``(..., n)`` and broadcast.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DynamicsEvaluationError

Array = np.ndarray


def _as_box(box, dim: int, name: str) -> Array:
    out = np.asarray(box, dtype=float).reshape(dim, 2) if dim else np.zeros((0, 2))
    if dim and not np.all(np.isfinite(out)):
        raise ValueError(f"{name} bounds must be finite")
    if dim and np.any(out[:, 0] > out[:, 1]):
        raise ValueError(f"{name} must satisfy min <= max per component")
    return out


@dataclass(frozen=True)
class ControlAffineSystem:
    """Evaluator bundle for one control/disturbance-affine system.

    ``flow``, ``control_matrix`` and ``disturbance_matrix`` map a state
    batch ``(..., n)`` to ``(..., n)``, ``(..., n, m)`` and ``(..., n, k)``
    respectively. ``periodic_dims`` lists state indices treated as angles;
    trajectory integration wraps them and grids must agree.
    """

    state_dim: int
    control_dim: int
    disturbance_dim: int
    flow: Callable[[Array], Array]
    control_matrix: Callable[[Array], Array]
    disturbance_matrix: Callable[[Array], Array]
    control_box: Array
    disturbance_box: Array
    periodic_dims: frozenset = field(default_factory=frozenset)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(
            self, "control_box", _as_box(self.control_box, self.control_dim, "control_box")
        )
        object.__setattr__(
            self,
            "disturbance_box",
            _as_box(self.disturbance_box, self.disturbance_dim, "disturbance_box"),
        )
        object.__setattr__(self, "periodic_dims", frozenset(self.periodic_dims))
        for i in self.periodic_dims:
            if not 0 <= i < self.state_dim:
                raise ValueError(f"periodic dim {i} out of range")

    def f(self, x: Array) -> Array:
        return np.asarray(self.flow(np.asarray(x, dtype=float)), dtype=float)

    def g(self, x: Array) -> Array:
        return np.asarray(self.control_matrix(np.asarray(x, dtype=float)), dtype=float)

    def E(self, x: Array) -> Array:
        return np.asarray(self.disturbance_matrix(np.asarray(x, dtype=float)), dtype=float)


def eval_rhs(sys: ControlAffineSystem, x: Array, u: Array, d: Array | None = None) -> Array:
    """Evaluate ``f(x) + g(x) u + E(x) d``.

    ``d`` may be omitted for systems without disturbance. Inputs must lie
    inside their boxes; a non-finite result raises
    :class:`DynamicsEvaluationError` naming the offending component.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1] != sys.state_dim:
        raise ValueError(f"state has dim {x.shape[-1]}, expected {sys.state_dim}")
    if u.shape[-1] != sys.control_dim if sys.control_dim else u.size:
        raise ValueError(f"control has dim {u.shape[-1]}, expected {sys.control_dim}")
    eps = 1e-12
    if sys.control_dim and (
        np.any(u < sys.control_box[:, 0] - eps) or np.any(u > sys.control_box[:, 1] + eps)
    ):
        raise ValueError("control outside control_box")
    out = sys.f(x) + np.einsum("...nm,...m->...n", sys.g(x), u)
    if sys.disturbance_dim:
        if d is None:
            raise ValueError("system has a disturbance input; d is required")
        d = np.asarray(d, dtype=float)
        if d.shape[-1] != sys.disturbance_dim:
            raise ValueError(f"disturbance has dim {d.shape[-1]}, expected {sys.disturbance_dim}")
        if np.any(d < sys.disturbance_box[:, 0] - eps) or np.any(d > sys.disturbance_box[:, 1] + eps):
            raise ValueError("disturbance outside disturbance_box")
        out = out + np.einsum("...nk,...k->...n", sys.E(x), d)
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(np.atleast_2d(out)))[0]
        raise DynamicsEvaluationError(f"non-finite dynamics value in component {bad[-1]}")
    return out


def _bang_bang(coeff: Array, box: Array, minimize: bool) -> Array:
    """Per-component extremizer of ``coeff_j * w_j`` over a box.

    Ties (coefficient exactly zero) take the box midpoint.
    """
    lo, hi = box[:, 0], box[:, 1]
    mid = 0.5 * (lo + hi)
    if minimize:
        pick_lo = coeff > 0
        pick_hi = coeff < 0
    else:
        pick_lo = coeff < 0
        pick_hi = coeff > 0
    return np.where(pick_lo, lo, np.where(pick_hi, hi, mid))


def optimal_control(
    sys: ControlAffineSystem, x: Array, p: Array, mode: str = "minimize"
) -> Array:
    """Bang-bang extremizer of ``p . g(x) u`` over the control box."""
    if mode not in ("minimize", "maximize"):
        raise ValueError(f"mode must be minimize or maximize, got {mode!r}")
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != sys.state_dim:
        raise ValueError("costate dimension mismatch")
    if not np.all(np.isfinite(p)):
        raise ValueError("costate must be finite")
    if sys.control_dim == 0:
        return np.zeros(0)
    pg = np.einsum("...n,...nm->...m", p, sys.g(x))
    return _bang_bang(pg, sys.control_box, minimize=(mode == "minimize"))


def optimal_disturbance(sys: ControlAffineSystem, x: Array, p: Array) -> Array:
    """Worst-case (maximizing) disturbance of ``p . E(x) d`` over its box."""
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != sys.state_dim:
        raise ValueError("costate dimension mismatch")
    if sys.disturbance_dim == 0:
        return np.zeros(0)
    pE = np.einsum("...n,...nk->...k", p, sys.E(x))
    return _bang_bang(pE, sys.disturbance_box, minimize=False)


def hamiltonian(sys: ControlAffineSystem, x: Array, p: Array) -> float:
    """Closed-form ``min_u max_d p.(f + g u + E d)`` for box input sets."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    val = float(np.dot(p, sys.f(x)))
    if sys.control_dim:
        pg = p @ sys.g(x)
        val += float(np.minimum(pg * sys.control_box[:, 0], pg * sys.control_box[:, 1]).sum())
    if sys.disturbance_dim:
        pE = p @ sys.E(x)
        val += float(np.maximum(pE * sys.disturbance_box[:, 0], pE * sys.disturbance_box[:, 1]).sum())
    return val


# ---------------------------------------------------------------------------
# Built-in systems


def _cart1d(control_box) -> ControlAffineSystem:
    return ControlAffineSystem(
        state_dim=1,
        control_dim=1,
        disturbance_dim=0,
        flow=lambda x: x.copy(),
        control_matrix=lambda x: np.ones(x.shape[:-1] + (1, 1)),
        disturbance_matrix=lambda x: np.zeros(x.shape[:-1] + (1, 0)),
        control_box=control_box,
        disturbance_box=np.zeros((0, 2)),
        name="cart1d",
    )


def _double_integrator(control_box, d_max: float) -> ControlAffineSystem:
    def flow(x):
        out = np.zeros_like(x)
        out[..., 0] = x[..., 1]
        return out

    def gmat(x):
        out = np.zeros(x.shape[:-1] + (2, 1))
        out[..., 1, 0] = 1.0
        return out

    def emat(x):
        out = np.zeros(x.shape[:-1] + (2, 1))
        out[..., 0, 0] = 1.0
        return out

    return ControlAffineSystem(
        state_dim=2,
        control_dim=1,
        disturbance_dim=1,
        flow=flow,
        control_matrix=gmat,
        disturbance_matrix=emat,
        control_box=control_box,
        disturbance_box=[[-d_max, d_max]],
        name="double_integrator",
    )


def _dubins3d(control_box, d_max: float, v: float) -> ControlAffineSystem:
    def flow(x):
        out = np.zeros_like(x)
        out[..., 0] = v * np.cos(x[..., 2])
        out[..., 1] = v * np.sin(x[..., 2])
        return out

    def gmat(x):
        out = np.zeros(x.shape[:-1] + (3, 1))
        out[..., 2, 0] = 1.0
        return out

    def emat(x):
        out = np.zeros(x.shape[:-1] + (3, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = 1.0
        return out

    return ControlAffineSystem(
        state_dim=3,
        control_dim=1,
        disturbance_dim=2,
        flow=flow,
        control_matrix=gmat,
        disturbance_matrix=emat,
        control_box=control_box,
        disturbance_box=[[-d_max, d_max], [-d_max, d_max]],
        periodic_dims=frozenset({2}),
        name="dubins3d",
    )


def builtin_system(name: str, **params) -> ControlAffineSystem:
    """Construct one of the shipped benchmark systems.

    cart1d:            dx = x + u,                        u in [-1, 1]
    double_integrator: dx1 = x2 + d, dx2 = u,             u in [-1, 1], |d| <= d_max
    dubins3d:          dx1 = v cos x3 + d1, dx2 = v sin x3 + d2, dx3 = u,
                       x3 periodic, u in [-1, 1], |d_i| <= d_max, v > 0
    """
    control_box = params.pop("control_box", [[-1.0, 1.0]])
    if name == "cart1d":
        _reject_extra(params, name)
        return _cart1d(control_box)
    if name == "double_integrator":
        d_max = float(params.pop("d_max", 0.0))
        _reject_extra(params, name)
        if d_max < 0:
            raise ValueError("d_max must be >= 0")
        return _double_integrator(control_box, d_max)
    if name == "dubins3d":
        v = float(params.pop("v", 1.0))
        d_max = float(params.pop("d_max", 0.2))
        _reject_extra(params, name)
        if v <= 0:
            raise ValueError("dubins3d requires v > 0")
        if d_max < 0:
            raise ValueError("d_max must be >= 0")
        return _dubins3d(control_box, d_max, v)
    raise ValueError(f"unknown builtin system {name!r}")


def _reject_extra(params: dict, name: str) -> None:
    if params:
        raise ValueError(f"unknown parameters for {name}: {sorted(params)}")
