import numpy as np

from hjras.plotting import SvgFigure, marching_squares, mask_row_runs


def test_circle_contour_radius():
    xs = np.linspace(-2, 2, 101)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    values = np.sqrt(X**2 + Y**2) - 1.0
    segments = marching_squares(values, xs, xs)
    assert len(segments) > 50
    pts = np.array([p for seg in segments for p in seg])
    radii = np.linalg.norm(pts, axis=1)
    assert abs(radii.mean() - 1.0) < 0.01
    assert radii.std() < 0.02


def test_constant_positive_field_has_no_contour():
    xs = np.linspace(0, 1, 11)
    values = np.ones((11, 11))
    assert marching_squares(values, xs, xs) == []


def test_saddle_cells_resolved():
    xs = np.linspace(-1, 1, 3)
    values = np.array([[-1, 1, -1], [1, -1, 1], [-1, 1, -1]], dtype=float)
    segments = marching_squares(values, xs, xs)
    assert len(segments) >= 8  # every cell is ambiguous, two segments each


def test_mask_row_runs():
    mask = np.array([[1, 1, 0], [0, 1, 1], [0, 0, 0]], dtype=bool)
    runs = mask_row_runs(mask)
    assert (0, 1, 0) in runs  # column 0 holds a single run: row 0 only
    assert (0, 2, 1) in runs  # column 1: rows 0..1
    total = sum(b - a for a, b, _ in runs)
    assert total == mask.sum()


def test_svg_deterministic_and_wellformed():
    fig = SvgFigure([-1, -1], [1, 1])
    fig.add_segments([((0, 0), (0.5, 0.5))], "#ff0000", dashed=True)
    fig.add_polyline(np.array([[0, 0], [0.3, 0.4]]), "black")
    fig.add_cells([(0, 2, 1)], np.linspace(-1, 1, 5), np.linspace(-1, 1, 5), 0.5, 0.5, "#00ff00")
    out1 = fig.render()
    assert out1.startswith("<svg") and out1.rstrip().endswith("</svg>")
    fig2 = SvgFigure([-1, -1], [1, 1])
    fig2.add_segments([((0, 0), (0.5, 0.5))], "#ff0000", dashed=True)
    fig2.add_polyline(np.array([[0, 0], [0.3, 0.4]]), "black")
    fig2.add_cells([(0, 2, 1)], np.linspace(-1, 1, 5), np.linspace(-1, 1, 5), 0.5, 0.5, "#00ff00")
    assert fig2.render() == out1
