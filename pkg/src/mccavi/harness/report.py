"""Trace summaries, summary tables and hand-written SVG charts."""
from __future__ import annotations

import csv
import math
from html import escape

import numpy as np

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
_W, _H = 640, 400
_MARGIN = (60, 20, 30, 50)  # left, right, top, bottom


def read_trace_csv(path):
    """Columns of a trace CSV as float arrays (blank cells become NaN)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty trace file") from None
        rows = [[float(v) if v != "" else math.nan for v in row] for row in reader]
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return {name: data[:, j] for j, name in enumerate(header)}


def summarize_trace(trace, burn_in: int, columns=None):
    """Mean and sample sd of each column over the rows after ``burn_in``.

    ``trace`` is a CSV path or a mapping of column arrays. A single remaining
    row has sd 0 by convention. The ``sweep`` column is skipped.
    """
    cols = read_trace_csv(trace) if isinstance(trace, (str, bytes)) or hasattr(trace, "__fspath__") else trace
    if burn_in < 0:
        raise ValueError("burn_in must be non-negative")
    names = [c for c in (columns or cols) if c != "sweep"]
    out = {}
    for name in names:
        values = np.asarray(cols[name], float)
        if values.shape[0] <= burn_in:
            raise ValueError(f"trace has {values.shape[0]} rows, need more than burn_in={burn_in}")
        tail = values[burn_in:]
        sd = float(np.std(tail, ddof=1)) if tail.size > 1 else 0.0
        out[name] = (float(np.mean(tail)), sd)
    return out


def write_summary_csv(path, summary):
    """``summary`` maps engine -> {parameter: (mean, sd)}."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["engine", "parameter", "mean", "sd"])
        for engine, rows in summary.items():
            for name, (mean, sd) in rows.items():
                w.writerow([engine, name, repr(mean), repr(sd)])


def read_summary_csv(path):
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["engine"], {})[row["parameter"]] = (float(row["mean"]), float(row["sd"]))
    return out


def format_table(summary, rows, labels=None, digits=4):
    """Plain-text table with one column per engine and ``mean (sd)`` cells."""
    engines = list(summary)
    labels = labels or {}
    header = ["parameter"] + engines
    body = []
    for r in rows:
        cells = [labels.get(r, r)]
        for e in engines:
            if r in summary[e]:
                m, s = summary[e][r]
                cells.append(f"{m:.{digits}g} ({s:.{digits - 1}g})")
            else:
                cells.append("-")
        body.append(cells)
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(str(c).ljust(wd) for c, wd in zip(line, widths)) for line in [header] + body]
    return "\n".join(lines) + "\n"


# -- SVG -------------------------------------------------------------------------

class _Axes:
    def __init__(self, xs, ys):
        xs = np.concatenate([np.ravel(x) for x in xs])
        ys = np.concatenate([np.ravel(y) for y in ys])
        xs, ys = xs[np.isfinite(xs)], ys[np.isfinite(ys)]
        self.x0, self.x1 = (float(xs.min()), float(xs.max())) if xs.size else (0.0, 1.0)
        self.y0, self.y1 = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
        if self.x1 == self.x0:
            self.x0, self.x1 = self.x0 - 0.5, self.x1 + 0.5
        if self.y1 == self.y0:
            pad = abs(self.y0) * 0.05 or 0.5
            self.y0, self.y1 = self.y0 - pad, self.y1 + pad

    def px(self, x):
        left, right = _MARGIN[0], _W - _MARGIN[1]
        return left + (np.asarray(x, float) - self.x0) / (self.x1 - self.x0) * (right - left)

    def py(self, y):
        top, bottom = _MARGIN[2], _H - _MARGIN[3]
        return bottom - (np.asarray(y, float) - self.y0) / (self.y1 - self.y0) * (bottom - top)


def _points(ax, x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    keep = np.isfinite(x) & np.isfinite(y)
    return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(ax.px(x[keep]), ax.py(y[keep])))


def _frame(ax, title, xlabel, ylabel):
    left, right, top, bottom = _MARGIN[0], _W - _MARGIN[1], _MARGIN[2], _H - _MARGIN[3]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
           f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
           f'<text x="{_W / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>',
           f'<text x="{(left + right) / 2}" y="{_H - 8}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="14" y="{(top + bottom) / 2}" text-anchor="middle" '
           f'transform="rotate(-90 14 {(top + bottom) / 2})">{escape(ylabel)}</text>']
    for frac in (0.0, 0.5, 1.0):
        xv = ax.x0 + frac * (ax.x1 - ax.x0)
        yv = ax.y0 + frac * (ax.y1 - ax.y0)
        out.append(f'<text x="{ax.px(xv):.2f}" y="{bottom + 14}" text-anchor="middle">{xv:.4g}</text>')
        out.append(f'<text x="{left - 4}" y="{ax.py(yv):.2f}" text-anchor="end">{yv:.4g}</text>')
    return out


def _legend(names):
    out = []
    for i, name in enumerate(names):
        y = _MARGIN[2] + 12 + 14 * i
        colour = _PALETTE[i % len(_PALETTE)]
        out.append(f'<line x1="{_W - 150}" y1="{y}" x2="{_W - 130}" y2="{y}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{_W - 125}" y="{y + 4}">{escape(name)}</text>')
    return out


def line_chart_svg(series, title="", xlabel="", ylabel="") -> str:
    """``series`` maps a label to ``(x, y)``; one polyline per entry."""
    ax = _Axes([s[0] for s in series.values()], [s[1] for s in series.values()])
    parts = _frame(ax, title, xlabel, ylabel)
    for i, (name, (x, y)) in enumerate(series.items()):
        parts.append(f'<polyline fill="none" stroke="{_PALETTE[i % len(_PALETTE)]}" stroke-width="1.5" '
                     f'points="{_points(ax, x, y)}"/>')
    parts += _legend(list(series))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_line_chart(path, series, title="", xlabel="", ylabel=""):
    with open(path, "w") as fh:
        fh.write(line_chart_svg(series, title, xlabel, ylabel))


def fit_band(curves, level: float = 0.95):
    """Pointwise mean and central ``level`` interval of an (S, n) array of fitted curves."""
    curves = np.atleast_2d(np.asarray(curves, float))
    if curves.shape[0] < 1:
        raise ValueError("need at least one fitted curve")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(curves, [tail, 1.0 - tail], axis=0)
    return curves.mean(axis=0), lo, hi


def _band_svg(x, data, mean, lo, hi, truth, title, xlabel, ylabel):
    ax = _Axes([x], [data, lo, hi] + ([truth] if truth is not None else []))
    parts = _frame(ax, title, xlabel, ylabel)
    band = _points(ax, x, hi) + " " + _points(ax, x[::-1], lo[::-1])
    parts.append(f'<polygon fill="#bbbbbb" fill-opacity="0.6" stroke="none" points="{band}"/>')
    for xi, yi in zip(ax.px(x), ax.py(data)):
        parts.append(f'<circle cx="{xi:.2f}" cy="{yi:.2f}" r="1.5" fill="black"/>')
    parts.append(f'<polyline fill="none" stroke="{_PALETTE[0]}" stroke-width="1.5" points="{_points(ax, x, mean)}"/>')
    names = ["posterior mean"]
    if truth is not None:
        names.append("truth")
        parts.append(f'<polyline fill="none" stroke="{_PALETTE[1]}" stroke-dasharray="4 3" '
                     f'points="{_points(ax, x, truth)}"/>')
    parts += _legend(names)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_fit_plot(path, x, data, curves, truth=None, title="posterior fit", xlabel="x", ylabel="y"):
    """Data, posterior mean curve and the 2.5%-97.5% pointwise band as an SVG.

    Returns ``(mean, lo, hi)``.
    """
    x = np.asarray(x, float)
    mean, lo, hi = fit_band(curves)
    with open(path, "w") as fh:
        fh.write(_band_svg(x, np.asarray(data, float), mean, lo, hi, truth, title, xlabel, ylabel))
    return mean, lo, hi


def band_coverage(lo, hi, truth) -> float:
    """Fraction of ``truth`` points inside ``[lo, hi]``."""
    truth = np.asarray(truth, float)
    return float(np.mean((truth >= lo) & (truth <= hi)))


def write_band_csv(path, x, data, mean, lo, hi, truth=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "data", "mean", "lo", "hi"] + (["truth"] if truth is not None else []))
        for i in range(len(x)):
            row = [x[i], data[i], mean[i], lo[i], hi[i]] + ([truth[i]] if truth is not None else [])
            w.writerow([repr(float(v)) for v in row])


def replot_band(csv_path, svg_path, title="posterior fit", xlabel="x", ylabel="y"):
    """Re-renders a fit plot from a band CSV written by :func:`write_band_csv`."""
    c = read_trace_csv(csv_path)
    with open(svg_path, "w") as fh:
        fh.write(_band_svg(c["x"], c["data"], c["mean"], c["lo"], c["hi"], c.get("truth"), title, xlabel, ylabel))
