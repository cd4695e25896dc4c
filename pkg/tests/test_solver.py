import numpy as np
import pytest

from hjras.dynamics import ControlAffineSystem, builtin_system
from hjras.errors import DegenerateDynamicsError, NotStabilizableError
from hjras.grids import Grid, ScalarField
from hjras.shapes import ball, half_plane, rasterize, rasterize_obstacle
from hjras.solver import (
    cfl_dt,
    estimate_min_invariant_offset,
    lf_step,
    solve_converged_avoid,
    solve_finite_horizon,
    solve_rclvf,
)


@pytest.fixture
def cart():
    return builtin_system("cart1d")


@pytest.fixture
def cart_grid():
    return Grid([-2.0], [2.0], [401], [False])


def interior_mask(grid, frame):
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


class TestCflDt:
    def test_cart_hand_formula(self, cart, cart_grid):
        # alpha = max|x| + max|u| = 3, dx = 0.01
        assert cfl_dt(cart, cart_grid, 0.5) == pytest.approx(0.5 * 0.01 / 3.0)

    def test_doubling_nodes_halves_dt(self, cart):
        g1 = Grid([-2.0], [2.0], [101], [False])
        g2 = Grid([-2.0], [2.0], [201], [False])
        assert cfl_dt(cart, g2, 0.5) == pytest.approx(cfl_dt(cart, g1, 0.5) / 2.0)

    def test_cfl_scales_linearly(self, cart, cart_grid):
        assert cfl_dt(cart, cart_grid, 1.0) == pytest.approx(2 * cfl_dt(cart, cart_grid, 0.5))

    def test_degenerate_dynamics(self):
        frozen = ControlAffineSystem(
            state_dim=1,
            control_dim=1,
            disturbance_dim=0,
            flow=lambda x: np.zeros_like(x),
            control_matrix=lambda x: np.zeros(x.shape[:-1] + (1, 1)),
            disturbance_matrix=lambda x: np.zeros(x.shape[:-1] + (1, 0)),
            control_box=[[0.0, 0.0]],
            disturbance_box=np.zeros((0, 2)),
        )
        with pytest.raises(DegenerateDynamicsError):
            cfl_dt(frozen, Grid([-1.0], [1.0], [11], [False]), 0.5)

    def test_bad_cfl(self, cart, cart_grid):
        with pytest.raises(ValueError):
            cfl_dt(cart, cart_grid, 1.5)


class TestLfStep:
    def test_refuses_cfl_violation(self, cart, cart_grid):
        r = rasterize(ball([0.0], 0.5), cart_grid)
        with pytest.raises(ValueError, match="CFL"):
            lf_step(cart, r, "reach", dt=1.0, r_field=r)

    def test_clamp_fixed_point(self):
        """Outward drift with no control authority: V = r is stationary."""
        drift = ControlAffineSystem(
            state_dim=1,
            control_dim=1,
            disturbance_dim=0,
            flow=lambda x: x.copy(),
            control_matrix=lambda x: np.zeros(x.shape[:-1] + (1, 1)),
            disturbance_matrix=lambda x: np.zeros(x.shape[:-1] + (1, 0)),
            control_box=[[-1.0, 1.0]],
            disturbance_box=np.zeros((0, 2)),
        )
        grid = Grid([-2.0], [2.0], [101], [False])
        r = rasterize(ball([0.0], 0.5), grid)
        dt = cfl_dt(drift, grid, 0.5)
        out = lf_step(drift, r, "reach", dt=dt, r_field=r)
        assert np.allclose(out.values, r.values)

    def test_requires_cost_fields(self, cart, cart_grid):
        r = rasterize(ball([0.0], 0.5), cart_grid)
        with pytest.raises(ValueError, match="requires"):
            lf_step(cart, r, "avoid", dt=1e-4)


class TestSolveFiniteHorizon:
    def test_short_horizon_two_slices(self, cart, cart_grid):
        r = rasterize(ball([0.0], 0.1), cart_grid)
        snaps = solve_finite_horizon(cart, "reach", horizon=1e-4, snapshot_stride=1.0, r_field=r)
        assert snaps.n_slices == 2
        assert snaps.times[-1] == pytest.approx(1e-4)

    def test_terminal_slice_exact(self, cart, cart_grid):
        r = rasterize(ball([0.0], 0.1), cart_grid)
        snaps = solve_finite_horizon(cart, "reach", horizon=0.5, snapshot_stride=0.1, r_field=r)
        assert np.array_equal(snaps.stack[0], r.values)

    def test_snapshot_times_are_stride_multiples(self, cart, cart_grid):
        r = rasterize(ball([0.0], 0.1), cart_grid)
        snaps = solve_finite_horizon(cart, "reach", horizon=0.55, snapshot_stride=0.1, r_field=r)
        assert np.allclose(snaps.times[:-1], np.arange(6) * 0.1)
        assert snaps.times[-1] == pytest.approx(0.55)

    def test_cart_reach_grows_and_matches_analytic(self, cart, cart_grid):
        """Backward reach of dx = x + u, target |x| <= 0.1.

        Independent oracle: with u = -sign(x) the gap obeys
        d|x|/ds = |x| - 1, so the tube boundary sits at 1 - 0.9 e^{-tau}.
        """
        r = rasterize(ball([0.0], 0.1), cart_grid)
        snaps = solve_finite_horizon(cart, "reach", horizon=0.5, snapshot_stride=0.1, r_field=r)
        xs = cart_grid.axis_coords(0)

        def numeric_boundary(values):
            inside = xs[values <= 0]
            return inside.max()

        b_01 = numeric_boundary(snaps.stack[snaps.time_index(0.1)])
        b_05 = numeric_boundary(snaps.stack[snaps.time_index(0.5)])
        assert b_05 > b_01 + 0.2  # strictly growing tube
        for tau, b in ((0.1, b_01), (0.5, b_05)):
            exact = 1.0 - 0.9 * np.exp(-tau)
            assert b == pytest.approx(exact, abs=2 * cart_grid.tol_level)

    def test_monotone_freezing_and_clamp_dominance(self):
        di = builtin_system("double_integrator", d_max=0.2)
        grid = Grid([-2, -2], [2, 2], [81, 81], [False, False])
        r = rasterize(ball([0.0, 0.0], 0.5), grid)
        snaps = solve_finite_horizon(di, "reach", horizon=1.0, snapshot_stride=0.1, r_field=r)
        # boundary closure leaks a geometrically-decaying wiggle inward,
        # hence the frame exclusion and the small slack
        interior = interior_mask(grid, 8)
        for k in range(1, snaps.n_slices):
            diff = snaps.stack[k] - snaps.stack[k - 1]
            assert diff[interior].max() <= 1e-6  # non-increasing
        assert np.all(snaps.stack <= r.values + 1e-12)  # clamp dominance everywhere

        c = rasterize_obstacle(ball([0.0, 1.0], 0.5), grid)
        av = solve_finite_horizon(di, "avoid", horizon=1.0, snapshot_stride=0.1, c_field=c)
        for k in range(1, av.n_slices):
            diff = av.stack[k] - av.stack[k - 1]
            assert diff[interior].min() >= -1e-6  # non-decreasing
        assert np.all(av.stack >= c.values - 1e-12)
        # zero-superlevel set of the avoid value contains the obstacle
        assert np.all(av.stack[-1][c.values >= 0] >= 0)

    def test_reach_avoid_bounds(self):
        di = builtin_system("double_integrator")
        grid = Grid([-2, -2], [2, 2], [61, 61], [False, False])
        r = rasterize(ball([0.0, 0.0], 0.5), grid)
        c = rasterize_obstacle(ball([0.0, 1.0], 0.5), grid)
        snaps = solve_finite_horizon(
            di, "reach_avoid", horizon=0.5, snapshot_stride=0.1, r_field=r, c_field=c
        )
        assert np.array_equal(snaps.stack[0], np.maximum(r.values, c.values))
        assert np.all(snaps.stack >= c.values - 1e-12)
        assert np.all(snaps.stack <= np.maximum(r.values, c.values) + 1e-12)

    def test_refinement_smoke(self):
        """Doubling resolution moves the tau=1 reach value by < 2 coarse bands."""
        di = builtin_system("double_integrator")
        coarse = Grid([-2, -2], [2, 2], [101, 101], [False, False])
        fine = Grid([-2, -2], [2, 2], [201, 201], [False, False])
        vals = {}
        for g in (coarse, fine):
            r = rasterize(ball([0.0, 0.0], 0.5), g)
            vals[g.num_nodes] = solve_finite_horizon(
                di, "reach", horizon=1.0, snapshot_stride=0.5, r_field=r
            ).stack[-1]
        v_c = vals[101 * 101].reshape(101, 101)
        v_f = vals[201 * 201].reshape(201, 201)[::2, ::2]
        inner = interior_mask(coarse, 8).reshape(101, 101)
        assert np.abs(v_c - v_f)[inner].max() < 2 * coarse.tol_level


class TestConvergedAvoid:
    def test_no_obstacle_converges_immediately(self, cart, cart_grid):
        c = ScalarField(cart_grid, np.full(cart_grid.num_nodes, -1.0))
        res = solve_converged_avoid(cart, c)
        assert res.converged and res.tau <= 2.0
        assert np.allclose(res.field.values, -1.0)

    def test_cart_right_obstacle_boundary_at_one(self, cart, cart_grid):
        """Obstacle {x >= 1.5}: drift beats control for x > 1, so the
        unavoidable set's boundary sits at x = 1 (analytic)."""
        c = ScalarField(cart_grid, -half_plane([1.0], 1.5)(cart_grid.points()))
        res = solve_converged_avoid(cart, c)
        assert res.converged
        xs = cart_grid.axis_coords(0)
        unsafe = xs[res.field.values >= 0]
        assert unsafe.min() == pytest.approx(1.0, abs=2 * cart_grid.tol_level)
        # interior state x = 0.5 is comfortably avoidable
        assert res.field.values[np.argmin(np.abs(xs - 0.5))] < -cart_grid.tol_level

    def test_di_obstacle_converges(self):
        di = builtin_system("double_integrator")
        grid = Grid([-2, -2], [2, 2], [101, 101], [False, False])
        c = rasterize_obstacle(ball([0.0, 1.0], 0.5), grid)
        res = solve_converged_avoid(di, c, tol=1e-3)
        assert res.converged
        assert np.all(res.field.values >= c.values - 1e-12)


class TestRclvf:
    def test_cart_analytic_structure(self, cart, cart_grid):
        """gamma=0.5: V = |x| up to 1/(1+g), then A(1-|x|)^{-g}; domain (-1,1)."""
        snaps = solve_rclvf(cart, cart_grid, [0.0], gamma=0.5, a_offset=0.0)
        assert snaps.converged
        V = snaps.stack[-1]
        xs = cart_grid.axis_coords(0)
        assert V[np.argmin(np.abs(xs))] == pytest.approx(0.0, abs=1e-9)
        g = 0.5
        x0 = 1 / (1 + g)
        A = x0 * (g / (1 + g)) ** g
        for xq in (0.3, 0.55, 0.8):
            exact = abs(xq) if abs(xq) <= x0 else A * (1 - abs(xq)) ** (-g)
            i = np.argmin(np.abs(xs - xq))
            assert V[i] == pytest.approx(exact, rel=0.05)
        capped = snaps.capped_mask()
        first_capped = np.abs(xs[capped]).min()
        assert first_capped == pytest.approx(1.0, abs=2 * cart_grid.tol_level)
        assert not capped[np.abs(xs) <= 0.95].any()

    def test_residual_of_converged_value(self, cart, cart_grid):
        """max(h - V, H + gamma V) vanishes at converged interior nodes."""
        from hjras.dynamics import hamiltonian
        from hjras.grids import central_difference_stack

        snaps = solve_rclvf(cart, cart_grid, [0.0], gamma=0.5, a_offset=0.0)
        V = snaps.stack[-1]
        h = snaps.h_values
        grad = central_difference_stack(snaps.final_field())
        xs = cart_grid.axis_coords(0)
        sel = (np.abs(xs) < 0.9) & ~snaps.capped_mask()
        worst = 0.0
        for i in np.flatnonzero(sel):
            ham = hamiltonian(cart, xs[[i]], grad[:, i]) + 0.5 * V[i]
            worst = max(worst, abs(max(h[i] - V[i], ham)))
        assert worst < 10 * cart_grid.tol_level

    def test_nonconvergence_flagged_for_tiny_horizon(self, cart, cart_grid):
        snaps = solve_rclvf(cart, cart_grid, [0.0], gamma=0.5, a_offset=0.0, max_horizon=2.0)
        assert snaps.converged is False

    def test_gamma_validation(self, cart, cart_grid):
        with pytest.raises(ValueError):
            solve_rclvf(cart, cart_grid, [0.0], gamma=0.0)
        with pytest.raises(ValueError):
            solve_rclvf(cart, cart_grid, [0.0], gamma=0.1, a_offset=-1.0)


class TestOffsetEstimate:
    def test_stable_equilibrium_needs_no_offset(self):
        di = builtin_system("double_integrator")
        grid = Grid([-2, -2], [2, 2], [61, 61], [False, False])
        assert estimate_min_invariant_offset(di, grid, [0.0, 0.0], 0.1) == 0.0

    def test_disturbance_forces_positive_offset(self):
        di = builtin_system("double_integrator", d_max=0.2)
        grid = Grid([-2, -2], [2, 2], [61, 61], [False, False])
        offset = estimate_min_invariant_offset(di, grid, [0.0, 0.0], 0.1)
        assert offset > 0.0
        assert offset < 1.0

    def test_unstabilizable_raises(self):
        runaway = ControlAffineSystem(
            state_dim=1,
            control_dim=1,
            disturbance_dim=0,
            flow=lambda x: 10.0 * np.sign(x) + 10.0 * (x == 0),
            control_matrix=lambda x: np.ones(x.shape[:-1] + (1, 1)),
            disturbance_matrix=lambda x: np.zeros(x.shape[:-1] + (1, 0)),
            control_box=[[-1.0, 1.0]],
            disturbance_box=np.zeros((0, 2)),
        )
        grid = Grid([-2.0], [2.0], [51], [False])
        with pytest.raises(NotStabilizableError):
            estimate_min_invariant_offset(runaway, grid, [0.0], 0.2, max_horizon=30.0)
