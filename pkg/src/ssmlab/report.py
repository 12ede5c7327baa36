"""Deterministic writers for experiment artifacts: JSON, CSV and SVG."""

from __future__ import annotations

import csv
import math
import os
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .experiments import ExperimentResult, PlotSpec

WIDTH, HEIGHT = 800, 500
MARGIN = {"left": 80, "right": 30, "top": 50, "bottom": 60}
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class ReportError(OSError):
    pass


# --- JSON --------------------------------------------------------------------------------

def _num(v) -> str:
    v = float(v)
    if not math.isfinite(v):
        return "null"
    return format(v, ".17g")


def to_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with floats at 17 significant digits and sorted keys."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return {None: "null", True: "true", False: "false"}[None if obj is None else bool(obj)]
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if isinstance(obj, str):
        import json
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{to_json(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in sorted(obj.items())]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(to_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + to_json(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(obj, path) -> None:
    try:
        Path(path).write_text(to_json(obj) + "\n")
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc


def write_csv(header, rows, path) -> None:
    try:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([v if isinstance(v, str) else (str(int(v)) if isinstance(v, (int, np.integer))
                            else format(float(v), ".17g")) for v in row])
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc


# --- SVG ---------------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _nice_ticks(lo: float, hi: float, count: int = 6) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(round(v, 12))
        v += step
    return ticks


def _tick_label(v: float) -> str:
    return f"{v:.6g}"


def render_svg(spec: PlotSpec, path=None) -> str:
    """Render a line plot to a standalone 800x500 SVG; returns the text and writes ``path`` if given."""
    series = [(name, np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)) for name, xs, ys in spec.series]
    for name, xs, ys in series:
        if xs.shape != ys.shape:
            raise ValueError(f"series {name!r}: x and y lengths differ")
        if spec.y_scale == "log10" and np.any(ys <= 0):
            raise ValueError(f"series {name!r}: log scale needs positive y")
    if spec.y_scale not in ("linear", "log10"):
        raise ValueError(f"unknown y_scale {spec.y_scale!r}")
    log = spec.y_scale == "log10"

    xs_all = np.concatenate([s[1] for s in series]) if series else np.array([])
    ys_all = np.concatenate([s[2] for s in series]) if series else np.array([])
    if log and ys_all.size:
        ys_all = np.log10(ys_all)
    x_lo, x_hi = (float(xs_all.min()), float(xs_all.max())) if xs_all.size else (0.0, 1.0)
    y_lo, y_hi = (float(ys_all.min()), float(ys_all.max())) if ys_all.size else (0.0, 1.0)
    if log:
        y_lo, y_hi = math.floor(y_lo + 1e-12), math.ceil(y_hi - 1e-12)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5

    left, top = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return left + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return top + ph - (y - y_lo) / (y_hi - y_lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if spec.title:
        out.append(f'<text x="{WIDTH / 2}" y="28" text-anchor="middle" font-size="16">{escape(spec.title)}</text>')

    for xt in _nice_ticks(x_lo, x_hi):
        if x_lo - 1e-12 <= xt <= x_hi + 1e-12:
            X = _fmt(px(xt))
            out.append(f'<line class="grid" x1="{X}" y1="{top}" x2="{X}" y2="{top + ph}" stroke="#eeeeee"/>')
            out.append(f'<text x="{X}" y="{top + ph + 18}" text-anchor="middle">{_tick_label(xt)}</text>')
    if log:
        for dec in range(int(y_lo), int(y_hi) + 1):
            Y = _fmt(py(dec))
            out.append(f'<line class="decade-grid" x1="{left}" y1="{Y}" x2="{left + pw}" y2="{Y}" stroke="#cccccc"/>')
            out.append(f'<text x="{left - 8}" y="{Y}" text-anchor="end" dominant-baseline="middle">1e{dec}</text>')
    else:
        for yt in _nice_ticks(y_lo, y_hi):
            if y_lo - 1e-12 <= yt <= y_hi + 1e-12:
                Y = _fmt(py(yt))
                out.append(f'<line class="grid" x1="{left}" y1="{Y}" x2="{left + pw}" y2="{Y}" stroke="#eeeeee"/>')
                out.append(f'<text x="{left - 8}" y="{Y}" text-anchor="end" dominant-baseline="middle">{_tick_label(yt)}</text>')

    out.append(f'<line class="axis" x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>')
    out.append(f'<line class="axis" x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>')
    if spec.x_label:
        out.append(f'<text x="{left + pw / 2}" y="{HEIGHT - 15}" text-anchor="middle">{escape(spec.x_label)}</text>')
    if spec.y_label:
        out.append(f'<text x="18" y="{top + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 18 {top + ph / 2})">{escape(spec.y_label)}</text>')

    for k, (name, xs, ys) in enumerate(series):
        color = COLORS[k % len(COLORS)]
        yv = np.log10(ys) if log else ys
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs, yv))
        if pts:
            out.append(f'<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 16 + 16 * k
        out.append(f'<line x1="{left + pw - 150}" y1="{ly}" x2="{left + pw - 125}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw - 120}" y="{ly}" dominant-baseline="middle">{escape(str(name))}</text>')
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        try:
            Path(path).write_text(text)
        except OSError as exc:
            raise ReportError(f"cannot write {path}: {exc}") from exc
    return text


# --- bundles -------------------------------------------------------------------------------

def write_report(result: ExperimentResult, outdir, manifest: dict | None = None) -> list[Path]:
    """Write ``<outdir>/<name>/`` with summary.json, one CSV per table, one SVG per plot and manifest.json."""
    target = Path(outdir) / result.name
    try:
        target.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create {target}: {exc}") from exc
    written = []
    path = target / "summary.json"
    write_json(result.summary, path)
    written.append(path)
    for stem, (header, rows) in sorted(result.tables.items()):
        path = target / f"{stem}.csv"
        write_csv(header, rows, path)
        written.append(path)
    for stem, spec in sorted(result.plots.items()):
        path = target / f"{stem}.svg"
        render_svg(spec, path)
        written.append(path)
    if manifest is not None:
        path = target / "manifest.json"
        write_json(manifest, path)
        written.append(path)
    return written
