"""Backend parity and monotonicity of the sweep kernels."""

import numpy as np
import pytest

import hjras.backend as backend
from hjras.dynamics import builtin_system
from hjras.grids import Grid
from hjras.solver import SolverWorkspace

pytestmark = pytest.mark.skipif(not backend.NUMBA_AVAILABLE, reason="numba not installed")


CASES = [
    ("cart1d", {}, Grid([-2.0], [2.0], [41], [False])),
    ("double_integrator", {"d_max": 0.2}, Grid([-2, -2], [2, 2], [31, 33], [False, False])),
    ("dubins3d", {}, Grid([-3, -3, 0], [3, 3, 2 * np.pi], [13, 15, 11], [False, False, True])),
]


@pytest.fixture(autouse=True)
def restore_backend():
    yield
    backend.set_backend("numba")


@pytest.mark.parametrize("name,params,grid", CASES)
@pytest.mark.parametrize("flux", ["lax_friedrichs", "exact_upwind"])
def test_backend_parity(name, params, grid, flux):
    sysm = builtin_system(name, **params)
    ws = SolverWorkspace(sysm, grid)
    rng = np.random.default_rng(42)
    V = rng.normal(size=grid.num_nodes)
    dt = ws.cfl_dt(0.5)
    sweep = ws.sweep if flux == "lax_friedrichs" else ws.godunov_sweep
    backend.set_backend("numba")
    out_nb = sweep(V, dt, 0.1)
    backend.set_backend("numpy")
    out_np = sweep(V, dt, 0.1)
    assert np.abs(out_nb - out_np).max() < 1e-12


def _interior(grid):
    """Nodes away from non-periodic boundaries, where the scheme is monotone.

    Boundary nodes use the extrapolating closure, which is one-sided by
    construction and not a monotone function of the inward neighbor.
    """
    keep = np.ones(tuple(grid.counts), dtype=bool)
    for d in range(grid.ndim):
        if grid.periodic[d]:
            continue
        sl = [slice(None)] * grid.ndim
        sl[d] = 0
        keep[tuple(sl)] = False
        sl[d] = -1
        keep[tuple(sl)] = False
    return keep.ravel()


@pytest.mark.parametrize("name,params,grid", CASES)
@pytest.mark.parametrize("flux", ["lax_friedrichs", "exact_upwind"])
def test_single_step_monotone_in_neighbors(name, params, grid, flux):
    """Raising any node value never lowers an interior node's update (CFL)."""
    sysm = builtin_system(name, **params)
    ws = SolverWorkspace(sysm, grid)
    sweep = ws.sweep if flux == "lax_friedrichs" else ws.godunov_sweep
    rng = np.random.default_rng(0)
    V = rng.normal(size=grid.num_nodes)
    dt = ws.cfl_dt(1.0)
    interior = _interior(grid)
    base = sweep(V, dt, 0.0)
    for _ in range(20):
        k = rng.integers(grid.num_nodes)
        bumped = V.copy()
        bumped[k] += rng.uniform(0.1, 1.0)
        out = sweep(bumped, dt, 0.0)
        assert np.all(out[interior] >= base[interior] - 1e-12)


def test_env_flag_selection(monkeypatch):
    monkeypatch.setenv("HJRAS_BACKEND", "numpy")
    backend._active = None
    assert backend.active_backend() == "numpy"
    monkeypatch.setenv("HJRAS_BACKEND", "nonsense")
    backend._active = None
    with pytest.raises(ValueError):
        backend.active_backend()
    monkeypatch.delenv("HJRAS_BACKEND")
    backend._active = None
    assert backend.active_backend() == "numba"


def test_separability_detection():
    from hjras.dynamics import ControlAffineSystem

    coupled = ControlAffineSystem(
        state_dim=2,
        control_dim=1,
        disturbance_dim=0,
        flow=lambda x: np.zeros_like(x),
        control_matrix=lambda x: np.ones(x.shape[:-1] + (2, 1)),
        disturbance_matrix=lambda x: np.zeros(x.shape[:-1] + (2, 0)),
        control_box=[[-1, 1]],
        disturbance_box=np.zeros((0, 2)),
    )
    ws = SolverWorkspace(coupled, Grid([-1, -1], [1, 1], [5, 5], [False, False]))
    assert not ws.separable()
    with pytest.raises(ValueError, match="separable"):
        ws.godunov_sweep(np.zeros(25), 1e-3, 0.0)
