import numpy as np
import pytest

from hjras.errors import DomainExit
from hjras.grids import (
    Grid,
    ScalarField,
    gradient,
    interpolate,
    node_coordinates,
    upwind_derivative_pair,
)
from hjras.shapes import (
    axis_box,
    ball,
    complement,
    grid_periods,
    half_plane,
    intersection,
    rasterize,
    rasterize_obstacle,
    union,
)


@pytest.fixture
def grid2d():
    return Grid([-2.0, -2.0], [2.0, 2.0], [41, 41], [False, False])


@pytest.fixture
def angle_grid():
    return Grid([0.0], [2 * np.pi], [4], [True])


class TestGrid:
    def test_validation(self):
        with pytest.raises(ValueError, match="3 nodes"):
            Grid([0.0], [1.0], [2], [False])
        with pytest.raises(ValueError, match="lower < upper"):
            Grid([1.0], [0.0], [5], [False])

    def test_spacing_periodic_excludes_endpoint(self, angle_grid):
        assert angle_grid.spacing[0] == pytest.approx(np.pi / 2)

    def test_node_coordinates_midpoint(self):
        g = Grid([-1.0], [1.0], [3], [False])
        assert node_coordinates(g, [1]) == pytest.approx([0.0])

    def test_node_coordinates_corner(self):
        g = Grid([-2.0, -2.0], [2.0, 2.0], [401, 401], [False, False])
        assert node_coordinates(g, [0, 0]) == pytest.approx([-2.0, -2.0])

    def test_node_coordinates_periodic_endpoint(self, angle_grid):
        assert node_coordinates(angle_grid, [3]) == pytest.approx([3 * np.pi / 2])

    def test_node_coordinates_out_of_range(self, angle_grid):
        with pytest.raises(IndexError):
            node_coordinates(angle_grid, [4])

    def test_tol_level(self, grid2d):
        assert grid2d.tol_level == pytest.approx(2 * 0.1)

    def test_points_row_major(self, grid2d):
        pts = grid2d.points()
        assert pts.shape == (41 * 41, 2)
        assert pts[0] == pytest.approx([-2, -2])
        assert pts[1] == pytest.approx([-2, -1.9])  # last dimension fastest


class TestRasterize:
    def test_ball_center(self, grid2d):
        f = rasterize(ball([0.0, 0.0], 0.5), grid2d)
        assert f.values[f.grid.num_nodes // 2] == pytest.approx(-0.5)

    def test_ball_boundary(self, grid2d):
        val = ball([0.0, 0.0], 0.5)(np.array([0.5, 0.0]))
        assert val == pytest.approx(0.0)

    def test_union_obstacle_negative_inside(self):
        shape = union(ball([-2.0, -2.0], 1.0), axis_box([-1.0, -1.0], [3.0, 2.0]))
        assert shape(np.array([0.0, 0.0])) < 0
        assert shape(np.array([-2.0, -2.5])) < 0
        assert shape(np.array([5.0, 5.0])) > 0

    def test_intersection_and_complement(self):
        shape = intersection(ball([0.0], 1.0), complement(ball([0.0], 0.5)))
        assert shape(np.array([0.75])) < 0
        assert shape(np.array([0.0])) > 0

    def test_half_plane(self):
        hp = half_plane([1.0, 0.0], 1.5)  # set {x1 >= 1.5}
        assert hp(np.array([2.0, 0.0])) < 0
        assert hp(np.array([0.0, 0.0])) > 0

    def test_min_max_commute_with_eval(self, grid2d):
        a, b = ball([0.4, 0.0], 0.7), axis_box([-1.0, -1.0], [0.0, 0.0])
        u = rasterize(union(a, b), grid2d).values
        assert np.allclose(u, np.minimum(rasterize(a, grid2d).values, rasterize(b, grid2d).values))
        i = rasterize(intersection(a, b), grid2d).values
        assert np.allclose(i, np.maximum(rasterize(a, grid2d).values, rasterize(b, grid2d).values))

    def test_obstacle_raster_sign(self, grid2d):
        f = rasterize_obstacle(ball([0.0, 0.0], 0.5), grid2d)
        assert f.values[f.grid.num_nodes // 2] == pytest.approx(0.5)

    def test_periodic_wrapped_ball(self):
        g = Grid([0.0], [2 * np.pi], [64], [True])
        f = rasterize(ball([0.0], 0.5), g)
        xs = g.axis_coords(0)
        near_seam = np.argmin(np.abs(xs - (2 * np.pi - 0.1)))
        expected = (2 * np.pi - xs[near_seam]) - 0.5  # wrapped distance to 0
        assert f.values[near_seam] == pytest.approx(expected, abs=1e-12)

    def test_dims_subset_cylinder(self):
        shape = ball([0.0, 3.0], 1.0, dims=(0, 1))
        assert shape(np.array([0.0, 3.0, 2.9])) == pytest.approx(-1.0)


class TestInterpolate:
    def test_exact_at_nodes(self, grid2d):
        f = rasterize(ball([0.3, -0.2], 0.5), grid2d)
        pts = grid2d.points()
        idx = [17, 500, 1200]
        for i in idx:
            assert interpolate(f, pts[i]) == pytest.approx(f.values[i], abs=1e-13)

    def test_linearity_1d(self):
        g = Grid([0.0], [1.0], [3], [False])
        f = ScalarField(g, [0.0, 0.5, 1.0])
        assert interpolate(f, [0.25]) == pytest.approx(0.25)

    def test_periodic_wrap_consistency(self):
        g = Grid([0.0], [2 * np.pi], [32], [True])
        f = ScalarField(g, np.sin(g.axis_coords(0)))
        eps = 1e-3
        assert interpolate(f, [2 * np.pi - eps]) == pytest.approx(interpolate(f, [-eps]), abs=1e-12)

    def test_out_of_bounds_signal(self, grid2d):
        f = rasterize(ball([0.0, 0.0], 0.5), grid2d)
        with pytest.raises(DomainExit):
            interpolate(f, [2.5, 0.0])

    def test_multilinear_reproduced_exactly(self, grid2d):
        pts = grid2d.points()
        f = ScalarField(grid2d, 2.0 * pts[:, 0] - 0.7 * pts[:, 1] + 0.3)
        rng = np.random.default_rng(0)
        for _ in range(20):
            q = rng.uniform(-1.9, 1.9, size=2)
            assert interpolate(f, q) == pytest.approx(2.0 * q[0] - 0.7 * q[1] + 0.3, abs=1e-12)


class TestGradient:
    def test_ball_gradient_direction(self, grid2d):
        f = rasterize(ball([0.0, 0.0], 0.5), grid2d)
        g = gradient(f, [1.0, 0.0])
        assert np.allclose(g, [1.0, 0.0], atol=2 * grid2d.spacing.max())

    def test_constant_field(self, grid2d):
        f = ScalarField(grid2d, np.full(grid2d.num_nodes, 3.0))
        assert np.allclose(gradient(f, [0.3, 0.4]), [0.0, 0.0])

    def test_coordinate_field_exact(self, grid2d):
        f = ScalarField(grid2d, grid2d.points()[:, 0])
        assert np.allclose(gradient(f, [0.13, -0.4]), [1.0, 0.0], atol=1e-12)

    def test_affine_exact_at_interior_nodes(self, grid2d):
        pts = grid2d.points()
        f = ScalarField(grid2d, 1.5 * pts[:, 0] + 2.5 * pts[:, 1])
        g = gradient(f, node_coordinates(grid2d, [7, 9]))
        assert np.allclose(g, [1.5, 2.5], atol=1e-12)


class TestUpwindPair:
    def test_linear_slope(self):
        g = Grid([0.0], [1.0], [11], [False])
        f = ScalarField(g, 2.0 * g.axis_coords(0))
        pm, pp = upwind_derivative_pair(f, 0)
        assert np.allclose(pm.values, 2.0)
        assert np.allclose(pp.values, 2.0)

    def test_kink(self):
        g = Grid([-1.0], [1.0], [21], [False])
        f = ScalarField(g, np.abs(g.axis_coords(0)))
        pm, pp = upwind_derivative_pair(f, 0)
        k = 10  # node at x = 0
        assert pm.values[k] == pytest.approx(-1.0)
        assert pp.values[k] == pytest.approx(1.0)

    def test_periodic_seam(self):
        g = Grid([0.0], [1.0], [10], [True])
        xs = g.axis_coords(0)
        f = ScalarField(g, xs)  # sawtooth when wrapped
        pm, pp = upwind_derivative_pair(f, 0)
        assert pm.values[0] == pytest.approx((0.0 - xs[-1]) / g.spacing[0])
        assert pp.values[-1] == pytest.approx((0.0 - xs[-1]) / g.spacing[0])
        assert np.allclose(pm.values[1:], 1.0)

    def test_boundary_replication(self):
        g = Grid([0.0], [1.0], [5], [False])
        f = ScalarField(g, g.axis_coords(0) ** 2)
        pm, pp = upwind_derivative_pair(f, 0)
        assert pm.values[0] == pytest.approx(pp.values[0])
        assert pp.values[-1] == pytest.approx(pm.values[-1])

    def test_bad_dim(self, grid2d):
        f = ScalarField(grid2d, np.zeros(grid2d.num_nodes))
        with pytest.raises(ValueError):
            upwind_derivative_pair(f, 5)


class TestScalarField:
    def test_length_validation(self, grid2d):
        with pytest.raises(ValueError, match="values"):
            ScalarField(grid2d, np.zeros(7))
