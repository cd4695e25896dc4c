"""Zero-contour extraction and SVG figure emission.

Figures are hand-written SVG (no plotting dependency) so outputs are
deterministic and diffable: fixed float formatting, stable element
order, no timestamps.
"""

import numpy as np

Array = np.ndarray

# case -> list of (edge, edge) segments; corners A=(i,j) B=(i+1,j) C=(i+1,j+1) D=(i,j+1)
# encoded bit 0..3 = A,B,C,D negative; edges 0=AB 1=BC 2=CD 3=DA
_CASES = {
    1: [(3, 0)],
    2: [(0, 1)],
    3: [(3, 1)],
    4: [(1, 2)],
    6: [(0, 2)],
    7: [(3, 2)],
    8: [(2, 3)],
    9: [(2, 0)],
    11: [(2, 1)],
    12: [(1, 3)],
    13: [(1, 0)],
    14: [(0, 3)],
}


def marching_squares(values: Array, xs: Array, ys: Array):
    """Zero-level segments of a 2D node field.

    ``values`` has shape (len(xs), len(ys)); returns a list of segment
    endpoint pairs in state coordinates. Saddle cells are disambiguated
    by the cell-center average.
    """
    v = np.asarray(values, dtype=float)
    neg = v < 0
    case = (
        neg[:-1, :-1].astype(np.int8)
        | (neg[1:, :-1] << 1)
        | (neg[1:, 1:] << 2)
        | (neg[:-1, 1:] << 3)
    )
    cells = np.argwhere((case > 0) & (case < 15))
    segments = []
    for i, j in cells:
        va, vb = v[i, j], v[i + 1, j]
        vc, vd = v[i + 1, j + 1], v[i, j + 1]
        corners = (
            (xs[i], ys[j], va),
            (xs[i + 1], ys[j], vb),
            (xs[i + 1], ys[j + 1], vc),
            (xs[i], ys[j + 1], vd),
        )

        def edge_point(e):
            x0, y0, v0 = corners[e]
            x1, y1, v1 = corners[(e + 1) % 4]
            t = 0.5 if v0 == v1 else v0 / (v0 - v1)
            return (x0 + t * (x1 - x0), y0 + t * (y1 - y0))

        c = int(case[i, j])
        if c in (5, 10):
            center_neg = (va + vb + vc + vd) < 0
            if c == 5:
                pairs = [(3, 0), (1, 2)] if not center_neg else [(3, 2), (1, 0)]
            else:
                pairs = [(0, 1), (2, 3)] if not center_neg else [(0, 3), (2, 1)]
        else:
            pairs = _CASES[c]
        for e0, e1 in pairs:
            segments.append((edge_point(e0), edge_point(e1)))
    return segments


def mask_row_runs(mask: Array):
    """Horizontal run-length spans of a 2D boolean mask: (i0, i1, j) cells."""
    m = np.asarray(mask, dtype=bool)
    runs = []
    for j in range(m.shape[1]):
        col = m[:, j]
        diff = np.diff(col.astype(np.int8))
        starts = np.flatnonzero(diff == 1) + 1
        stops = np.flatnonzero(diff == -1) + 1
        if col[0]:
            starts = np.r_[0, starts]
        if col[-1]:
            stops = np.r_[stops, len(col)]
        for a, b in zip(starts, stops):
            runs.append((int(a), int(b), j))
    return runs


class SvgFigure:
    """Minimal deterministic SVG canvas over a rectangular state window."""

    def __init__(self, lo, hi, size=640, pad=20):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        span = self.hi - self.lo
        self.scale = (size - 2 * pad) / float(span.max())
        self.pad = pad
        self.width = int(round(span[0] * self.scale)) + 2 * pad
        self.height = int(round(span[1] * self.scale)) + 2 * pad
        self.elements = []

    def to_px(self, x, y):
        sx = self.pad + (x - self.lo[0]) * self.scale
        sy = self.height - self.pad - (y - self.lo[1]) * self.scale
        return sx, sy

    @staticmethod
    def _fmt(v: float) -> str:
        return f"{v:.3f}"

    def add_segments(self, segments, color, width=1.5, dashed=False):
        if not segments:
            return
        parts = []
        for (x0, y0), (x1, y1) in segments:
            a = self.to_px(x0, y0)
            b = self.to_px(x1, y1)
            parts.append(
                f"M {self._fmt(a[0])} {self._fmt(a[1])} L {self._fmt(b[0])} {self._fmt(b[1])}"
            )
        dash = ' stroke-dasharray="6 4"' if dashed else ""
        self.elements.append(
            f'<path d="{" ".join(parts)}" fill="none" stroke="{color}" '
            f'stroke-width="{width}"{dash}/>'
        )

    def add_cells(self, runs, xs, ys, dx, dy, color, opacity=0.45):
        if not runs:
            return
        rects = []
        for i0, i1, j in runs:
            x0, y0 = self.to_px(xs[i0] - 0.5 * dx, ys[j] + 0.5 * dy)
            w = (i1 - i0) * dx * self.scale
            h = dy * self.scale
            rects.append(
                f'<rect x="{self._fmt(x0)}" y="{self._fmt(y0)}" '
                f'width="{self._fmt(w)}" height="{self._fmt(h)}"/>'
            )
        self.elements.append(
            f'<g fill="{color}" fill-opacity="{opacity}" stroke="none">{"".join(rects)}</g>'
        )

    def add_polyline(self, points, color, width=1.5, marker_start=True):
        if len(points) == 0:
            return
        px = [self.to_px(p[0], p[1]) for p in points]
        coords = " ".join(f"{self._fmt(x)},{self._fmt(y)}" for x, y in px)
        self.elements.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="{width}"/>'
        )
        if marker_start:
            x0, y0 = px[0]
            self.elements.append(
                f'<circle cx="{self._fmt(x0)}" cy="{self._fmt(y0)}" r="4" '
                f'fill="{color}" stroke="black" stroke-width="0.8"/>'
            )

    def render(self) -> str:
        frame = (
            f'<rect x="{self.pad}" y="{self.pad}" width="{self.width - 2 * self.pad}" '
            f'height="{self.height - 2 * self.pad}" fill="white" stroke="black" stroke-width="1"/>'
        )
        body = "\n".join([frame] + self.elements)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
            f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">\n'
            f"{body}\n</svg>\n"
        )
