"""SVG heatmaps and CSV summaries of persisted sweeps."""

from __future__ import annotations

import csv
import math
import shutil
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import RunDirError
from .harness import TRANSITIONS_CSV, SweepGrid, detect_transitions, load

LOG_MIN = -10.0
LOG_MAX = 1.0

HEATMAP_SVG = "heatmap.svg"
SUMMARY_CSV = "summary.csv"

# viridis anchors, low -> high
_ANCHORS = np.array([
    [68, 1, 84], [72, 40, 120], [62, 74, 137], [49, 104, 142], [38, 130, 142],
    [31, 158, 137], [53, 183, 121], [109, 205, 89], [180, 222, 44], [253, 231, 37],
], dtype=float)


def log_clamped(value: float) -> float | None:
    """log10 of a mean error clamped to [LOG_MIN, LOG_MAX]; None for NaN."""
    if math.isnan(value):
        return None
    if value <= 0:
        return LOG_MIN
    if math.isinf(value):
        return LOG_MAX
    return min(LOG_MAX, max(LOG_MIN, math.log10(value)))


def color(level: float | None) -> str:
    if level is None:
        return "#bbbbbb"
    u = (level - LOG_MIN) / (LOG_MAX - LOG_MIN) * (len(_ANCHORS) - 1)
    i = min(int(u), len(_ANCHORS) - 2)
    rgb = _ANCHORS[i] + (u - i) * (_ANCHORS[i + 1] - _ANCHORS[i])
    return "#%02x%02x%02x" % tuple(int(round(c)) for c in rgb)


def heatmap_svg(grid: SweepGrid, optimistic=None, cell: int = 28) -> str:
    """Rows x sample sizes, colored by log10 mean test error, with dashed
    vertical markers at each row's optimistic sample size."""
    means = grid.mean_test_error
    if means.size == 0:
        raise RunDirError("grid is empty")
    if optimistic is None:
        optimistic = grid.optimistic()
    labels = grid.row_labels
    sizes = list(grid.sample_sizes)
    R, N = means.shape
    left = 8 + 7 * max(len(s) for s in labels)
    top, bar_w = 30, 14
    width = left + N * cell + 40 + bar_w + 50
    height = top + R * cell + 60

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">',
        f'<text x="{left}" y="16">{escape(grid.spec.name or "sweep")}: mean test MSE '
        f'(fit threshold {grid.spec.fit_threshold:g})</text>',
    ]
    for r in range(R):
        y = top + r * cell
        out.append(f'<text x="{left - 4}" y="{y + cell / 2 + 4}" text-anchor="end">{escape(labels[r])}</text>')
        for j in range(N):
            x = left + j * cell
            level = log_clamped(float(means[r, j]))
            tip = "nan" if level is None else f"{means[r, j]:.3g}"
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{color(level)}">'
                       f'<title>{escape(labels[r])}, n={sizes[j]}: {tip}</title></rect>')
        opt = optimistic[r] if r < len(optimistic) else None
        if opt is not None and opt in sizes:
            # marker on the left edge of the optimistic column
            x = left + sizes.index(opt) * cell
            out.append(f'<line x1="{x}" y1="{y}" x2="{x}" y2="{y + cell}" stroke="#ffd700" '
                       f'stroke-width="3" stroke-dasharray="4,3"/>')
    for j, n in enumerate(sizes):
        out.append(f'<text x="{left + j * cell + cell / 2}" y="{top + R * cell + 14}" '
                   f'text-anchor="middle">{n}</text>')
    out.append(f'<text x="{left + N * cell / 2}" y="{top + R * cell + 32}" text-anchor="middle">'
               f'training samples n</text>')

    # legend: color bar from LOG_MAX (top) to LOG_MIN (bottom)
    bx = left + N * cell + 30
    bh = max(R * cell, 110)
    steps = 44
    for i in range(steps):
        level = LOG_MAX - (LOG_MAX - LOG_MIN) * (i + 0.5) / steps
        out.append(f'<rect x="{bx}" y="{top + i * bh / steps:.2f}" width="{bar_w}" '
                   f'height="{bh / steps + 0.5:.2f}" fill="{color(level)}"/>')
    for tick in range(int(LOG_MIN), int(LOG_MAX) + 1, 1):
        if (tick - int(LOG_MIN)) % 2 and tick != int(LOG_MAX):
            continue
        ty = top + (LOG_MAX - tick) / (LOG_MAX - LOG_MIN) * bh
        out.append(f'<text x="{bx + bar_w + 4}" y="{ty + 4:.2f}">{tick}</text>')
    out.append(f'<text x="{bx}" y="{top + bh + 16}">log10(mean test MSE)</text>')
    out.append(f'<text x="{bx}" y="{top + bh + 30}">clamped to [{LOG_MIN:g}, {LOG_MAX:g}]</text>')
    out.append(f'<text x="{left}" y="{height - 6}">dashed: optimistic sample size</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_summary(grid: SweepGrid, path, optimistic=None) -> None:
    """One line per row: transition, optimistic size and the mean error per n."""
    report = detect_transitions(grid, optimistic)
    means = grid.mean_test_error
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "empirical_n", "optimistic_n", "gap"] + [f"n={n}" for n in grid.sample_sizes])
        for row, values in zip(report.rows, means):
            w.writerow([row.label, "" if row.empirical_n is None else row.empirical_n,
                        "" if row.optimistic_n is None else row.optimistic_n,
                        "" if row.gap is None else row.gap] + [repr(float(v)) for v in values])


def make_report(run_dir, fmt: str = "svg", out_dir=None) -> list[Path]:
    """Render a run directory; returns the files written.

    The CSV summary is always written. ``svg`` adds the heatmap; ``csv``
    adds a copy of the run's transitions table.
    """
    if fmt not in ("svg", "csv"):
        raise ValueError(f"unknown report format {fmt!r}")
    run = Path(run_dir)
    grid = load(run)
    if grid.test_mse.size == 0:
        raise RunDirError("grid is empty")
    out = Path(out_dir) if out_dir is not None else run
    out.mkdir(parents=True, exist_ok=True)
    written = []
    summary = out / SUMMARY_CSV
    write_summary(grid, summary)
    written.append(summary)
    if fmt == "svg":
        path = out / HEATMAP_SVG
        path.write_text(heatmap_svg(grid))
        written.append(path)
    else:
        src = run / TRANSITIONS_CSV
        if not src.is_file():
            raise RunDirError(f"run directory is missing {TRANSITIONS_CSV}")
        dst = out / TRANSITIONS_CSV
        if src.resolve() != dst.resolve():
            shutil.copyfile(src, dst)
        written.append(dst)
    return written
