"""Minimal static SVG scatter plots; presentational output only.

Hand-rolled so emitted files are deterministic byte-for-byte (no library
metadata or timestamps).
"""

import io

import numpy as np

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
_SIZE = 480.0
_MARGIN = 24.0


def scatter_svg(points: np.ndarray, hulls=(), point_color="#44444488") -> str:
    """Render 2-d points (and optional hull polygons) as an SVG document."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    all_xy = [pts] + [np.asarray(h, dtype=np.float64).reshape(-1, 2) for h in hulls]
    stacked = np.vstack(all_xy)
    lo = stacked.min(axis=0)
    hi = stacked.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)

    def to_px(xy):
        scaled = (xy - lo) / span
        px = _MARGIN + scaled[:, 0] * (_SIZE - 2 * _MARGIN)
        py = _SIZE - _MARGIN - scaled[:, 1] * (_SIZE - 2 * _MARGIN)
        return px, py

    buf = io.StringIO()
    buf.write(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SIZE:.0f}" '
        f'height="{_SIZE:.0f}" viewBox="0 0 {_SIZE:.0f} {_SIZE:.0f}">\n'
    )
    buf.write(f'<rect width="{_SIZE:.0f}" height="{_SIZE:.0f}" fill="white"/>\n')
    px, py = to_px(pts)
    for x, y in zip(px, py):
        buf.write(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="1.5" fill="{point_color}"/>\n')
    for i, hull in enumerate(hulls):
        hx, hy = to_px(np.asarray(hull, dtype=np.float64).reshape(-1, 2))
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(hx, hy))
        color = _PALETTE[i % len(_PALETTE)]
        buf.write(
            f'<polygon points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="1.5"/>\n'
        )
    buf.write("</svg>\n")
    return buf.getvalue()


def write_scatter_svg(path, points, hulls=()) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(scatter_svg(points, hulls))
