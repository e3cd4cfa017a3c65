"""Plot-data emission: (x, y, series) tables, gnuplot blocks and a static SVG line plot."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path
from xml.sax.saxutils import escape

KINDS = ("bracket", "residual", "generic")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


class PlotInputError(ValueError):
    pass


def _read(paths) -> list[dict]:
    rows = []
    for p in paths:
        p = Path(p)
        if not p.exists():
            raise PlotInputError(f"{p}: no such file")
        with open(p, newline="") as fh:
            rows.extend(csv.DictReader(fh))
    if not rows:
        raise PlotInputError("no data rows in the inputs")
    return rows


def _need(rows, cols):
    missing = [c for c in cols if c not in rows[0]]
    if missing:
        raise PlotInputError(f"missing columns: {', '.join(missing)}")


def series_from_rows(rows, kind: str, x: str | None = None, y: str | None = None, series: str | None = None):
    """{series name: sorted [(x, y)]} for one of the known report layouts."""
    out = defaultdict(list)
    if kind == "bracket":
        # QV against target across gamma, one line per (phi, estimator)
        _need(rows, ["gamma", "phi_name", "estimator", "value"])
        for r in rows:
            out[f"{r['phi_name']}:{r['estimator']}"].append((float(r["gamma"]), float(r["value"])))
    elif kind == "residual":
        # log-log residual against block size
        _need(rows, ["ell", "residual_name", "estimate"])
        for r in rows:
            v = float(r["estimate"])
            if v > 0:
                out[r["residual_name"]].append((math.log(float(r["ell"])), math.log(v)))
    elif kind == "generic":
        if x is None or y is None:
            raise PlotInputError("generic plots need x and y column names")
        _need(rows, [x, y] + ([series] if series else []))
        for r in rows:
            out[r[series] if series else y].append((float(r[x]), float(r[y])))
    else:
        raise PlotInputError(f"kind must be one of {KINDS}")
    if not any(out.values()):
        raise PlotInputError("inputs produced no plottable points")
    return {k: sorted(v) for k, v in sorted(out.items())}


def render_svg(series: dict, title: str = "", xlabel: str = "x", ylabel: str = "y",
               width: int = 640, height: int = 420) -> str:
    pts = [p for s in series.values() for p in s]
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    ml, mr, mt, mb = 70, 150, 30, 50
    pw, ph = width - ml - mr, height - mt - mb

    def sx(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return mt + (1 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle">{escape(title)}</text>',
           f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="15" y="{mt + ph / 2:.1f}" text-anchor="middle" transform="rotate(-90 15 {mt + ph / 2:.1f})">{escape(ylabel)}</text>']
    for i in range(5):
        xv = x0 + i * (x1 - x0) / 4
        yv = y0 + i * (y1 - y0) / 4
        out.append(f'<text x="{sx(xv):.1f}" y="{mt + ph + 15}" text-anchor="middle">{xv:.3g}</text>')
        out.append(f'<text x="{ml - 5}" y="{sy(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
    for j, (name, s) in enumerate(series.items()):
        color = PALETTE[j % len(PALETTE)]
        path = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in s)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        for a, b in s:
            out.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="2.5" fill="{color}"/>')
        ly = mt + 12 + 16 * j
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 35}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_emit(inputs, out_dir, kind: str = "generic", *, x: str | None = None, y: str | None = None,
              series: str | None = None, name: str = "plot", title: str = "") -> list[Path]:
    """Write <name>.dat (gnuplot blocks), <name>_xy.csv and <name>.svg.

    Everything is computed before the first write, so bad input leaves no
    partial output behind.
    """
    rows = _read(inputs if isinstance(inputs, (list, tuple)) else [inputs])
    data = series_from_rows(rows, kind, x, y, series)
    labels = {"bracket": ("gamma", "bracket"), "residual": ("log ell", "log residual")}.get(kind, (x, y))
    svg = render_svg(data, title or name, *labels)
    dat = []
    for s, pts in data.items():
        dat.append(f'# series "{s}"')
        dat.extend(f"{a!r} {b!r}" for a, b in pts)
        dat.append("")
        dat.append("")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / f"{name}.dat", out_dir / f"{name}_xy.csv", out_dir / f"{name}.svg"]
    paths[0].write_text("\n".join(dat))
    with open(paths[1], "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "y", "series"])
        for s, pts in data.items():
            for a, b in pts:
                wr.writerow([repr(a), repr(b), s])
    paths[2].write_text(svg)
    return paths
