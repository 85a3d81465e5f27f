"""Phase portraits of the cycle-solving update field.

At each point of a 2-D grid over two tear variables (the others held at
their ground-truth values) the arrow is f(x) - x restricted to the pair:
the direction a direct-substitution step actually moves. The alignment
metric turns "arrows point toward the solution" into a number: the mean
cosine between each arrow and the direction to the true fixed point.

Grid coordinates and arrows are handled in standard-deviation-scaled units
so a kelvin axis and a mass-fraction axis weigh equally; the CSV export
carries raw physical values alongside.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .flowsheet import FlowsheetGraph, ResponseFunction, UnitEvaluationError


class AnalysisError(Exception):
    pass


@dataclass
class PhasePortrait:
    var_x: str
    var_y: str
    xs: np.ndarray          # raw grid coordinates, shape (nx,)
    ys: np.ndarray          # shape (ny,)
    dx: np.ndarray          # raw arrow components, shape (ny, nx), NaN if missing
    dy: np.ndarray
    fixed_point: tuple[float, float]   # raw coordinates of the true solution
    scale: tuple[float, float]         # sigma of the two variables
    data_points: np.ndarray            # (n, 2) raw overlay coordinates

    @property
    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.dx) & np.isfinite(self.dy)


def phase_portrait(graph: FlowsheetGraph, feeds: dict, extras: dict,
                   var_pair: tuple[str, str], truth: np.ndarray,
                   scale: np.ndarray, data_points: np.ndarray | None = None,
                   grid: int = 20, expand: float = 0.2,
                   bounds: tuple[tuple[float, float], tuple[float, float]] | None = None,
                   ) -> PhasePortrait:
    """Evaluate the update field f(x) - x on a grid over two tear variables.

    `truth` is the ground-truth tear vector (fixed point of the true
    plant); non-pair components stay at those values. `scale` holds the
    per-tear-variable standard deviations. Grid bounds default to the
    data range of each variable expanded by 20% on each side.
    """
    names = graph.tear_variable_names()
    try:
        ix, iy = names.index(var_pair[0]), names.index(var_pair[1])
    except ValueError as exc:
        raise AnalysisError(f"{exc.args[0].split()[0]} is not a tear variable; "
                            f"tears carry {names}")
    if bounds is None:
        if data_points is None or len(data_points) == 0:
            raise AnalysisError("need data_points or explicit bounds for the grid")
        bounds = []
        for j in range(2):
            lo, hi = float(data_points[:, j].min()), float(data_points[:, j].max())
            pad = expand * max(hi - lo, 1e-12)
            bounds.append((lo - pad, hi + pad))
    xs = np.linspace(bounds[0][0], bounds[0][1], grid)
    ys = np.linspace(bounds[1][0], bounds[1][1], grid)
    response = ResponseFunction(graph, feeds, extras)
    dx = np.full((grid, grid), np.nan)
    dy = np.full((grid, grid), np.nan)
    for r, yv in enumerate(ys):
        for c, xv in enumerate(xs):
            x = truth.copy()
            x[ix] = xv
            x[iy] = yv
            try:
                fx = response(x)
            except UnitEvaluationError:
                continue  # arrow marked missing
            if np.isfinite(fx[ix]) and np.isfinite(fx[iy]):
                dx[r, c] = fx[ix] - xv
                dy[r, c] = fx[iy] - yv
    return PhasePortrait(
        var_x=var_pair[0], var_y=var_pair[1], xs=xs, ys=ys, dx=dx, dy=dy,
        fixed_point=(float(truth[ix]), float(truth[iy])),
        scale=(float(scale[ix]), float(scale[iy])),
        data_points=data_points if data_points is not None else np.zeros((0, 2)))


def alignment_metric(portrait: PhasePortrait,
                     fixed_point: tuple[float, float] | None = None,
                     exclusion: float = 1e-6) -> float:
    """Mean cosine similarity between arrows and the direction to the fixed
    point, in sigma-scaled coordinates. Grid points within `exclusion`
    (scaled) of the fixed point are skipped; NaN when no arrow qualifies."""
    fp = fixed_point if fixed_point is not None else portrait.fixed_point
    sx, sy = portrait.scale
    cosines = []
    for r, yv in enumerate(portrait.ys):
        for c, xv in enumerate(portrait.xs):
            ax, ay = portrait.dx[r, c] / sx, portrait.dy[r, c] / sy
            if not (np.isfinite(ax) and np.isfinite(ay)):
                continue
            tx, ty = (fp[0] - xv) / sx, (fp[1] - yv) / sy
            norm_a = np.hypot(ax, ay)
            norm_t = np.hypot(tx, ty)
            if norm_t < exclusion or norm_a == 0.0:
                continue
            cosines.append((ax * tx + ay * ty) / (norm_a * norm_t))
    return float(np.mean(cosines)) if cosines else float("nan")


def portrait_to_csv(portrait: PhasePortrait, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([portrait.var_x, portrait.var_y, "dx", "dy"])
        for r, yv in enumerate(portrait.ys):
            for c, xv in enumerate(portrait.xs):
                writer.writerow([f"{xv:.17g}", f"{yv:.17g}",
                                 f"{portrait.dx[r, c]:.17g}",
                                 f"{portrait.dy[r, c]:.17g}"])
    return path


def portrait_to_svg(portrait: PhasePortrait, path, size: int = 560,
                    margin: int = 50) -> Path:
    """Self-contained SVG arrow plot: update field, data overlay, fixed point."""
    sx, sy = portrait.scale
    x_lo, x_hi = portrait.xs[0] / sx, portrait.xs[-1] / sx
    y_lo, y_hi = portrait.ys[0] / sy, portrait.ys[-1] / sy
    span_x = max(x_hi - x_lo, 1e-12)
    span_y = max(y_hi - y_lo, 1e-12)
    inner = size - 2 * margin

    def to_px(xv, yv):
        px = margin + (xv / sx - x_lo) / span_x * inner
        py = size - margin - (yv / sy - y_lo) / span_y * inner
        return px, py

    # arrow length normalized so the longest arrow spans ~one grid cell
    lengths = np.hypot(portrait.dx / sx, portrait.dy / sy)
    max_len = np.nanmax(lengths) if np.isfinite(lengths).any() else 1.0
    cell = inner / max(len(portrait.xs) - 1, 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<rect x="{margin}" y="{margin}" width="{inner}" height="{inner}" '
        f'fill="none" stroke="#888"/>',
        f'<text x="{size / 2:.0f}" y="{size - 12}" text-anchor="middle" '
        f'font-size="13">{portrait.var_x}</text>',
        f'<text x="14" y="{size / 2:.0f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 14 {size / 2:.0f})">{portrait.var_y}</text>',
    ]
    for r, yv in enumerate(portrait.ys):
        for c, xv in enumerate(portrait.xs):
            ax, ay = portrait.dx[r, c], portrait.dy[r, c]
            if not (np.isfinite(ax) and np.isfinite(ay)):
                continue
            x0, y0 = to_px(xv, yv)
            ln = np.hypot(ax / sx, ay / sy)
            if ln == 0.0 or max_len == 0.0:
                parts.append(f'<circle cx="{x0:.1f}" cy="{y0:.1f}" r="1.0" '
                             f'fill="#3465a4"/>')
                continue
            # pixel length graded by relative magnitude, capped near one cell
            px_len = 0.9 * cell * (0.25 + 0.75 * ln / max_len)
            x1 = x0 + (ax / sx) / ln * px_len
            y1 = y0 - (ay / sy) / ln * px_len
            parts.append(f'<line x1="{x0:.1f}" y1="{y0:.1f}" x2="{x1:.1f}" '
                         f'y2="{y1:.1f}" stroke="#3465a4" stroke-width="1"/>')
            # arrowhead: short segment rotated +/- 25 degrees back from the tip
            hx, hy = x1 - x0, y1 - y0
            hl = np.hypot(hx, hy)
            if hl > 0:
                hx, hy = hx / hl, hy / hl
                head = min(4.0, 0.4 * hl)
                for sgn in (1, -1):
                    ca, sa = np.cos(sgn * 0.45), np.sin(sgn * 0.45)
                    bx = x1 - head * (hx * ca - hy * sa)
                    by = y1 - head * (hx * sa + hy * ca)
                    parts.append(f'<line x1="{x1:.1f}" y1="{y1:.1f}" '
                                 f'x2="{bx:.1f}" y2="{by:.1f}" '
                                 f'stroke="#3465a4" stroke-width="1"/>')
    for px_raw, py_raw in portrait.data_points:
        px, py = to_px(px_raw, py_raw)
        if margin <= px <= size - margin and margin <= py <= size - margin:
            parts.append(f'<circle cx="{px:.1f}" cy="{py:.1f}" r="2.4" '
                         f'fill="#1c71d8" fill-opacity="0.6"/>')
    fx, fy = to_px(*portrait.fixed_point)
    star = _star_points(fx, fy, 9.0, 4.0)
    parts.append(f'<polygon points="{star}" fill="#2ec27e" stroke="#1a5d33"/>')
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts))
    return path


def _star_points(cx: float, cy: float, outer: float, inner: float) -> str:
    pts = []
    for k in range(10):
        radius = outer if k % 2 == 0 else inner
        ang = -np.pi / 2 + k * np.pi / 5
        pts.append(f"{cx + radius * np.cos(ang):.1f},{cy + radius * np.sin(ang):.1f}")
    return " ".join(pts)
