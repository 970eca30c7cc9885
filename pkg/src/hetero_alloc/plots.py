"""Minimal SVG line charts, written by hand so no plotting library is needed."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")


def _ticks(lo, hi, n=5):
    if not math.isfinite(lo) or not math.isfinite(hi) or hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    first = math.ceil(lo / step) * step
    return [first + j * step for j in range(int((hi - first) / step + 1e-9) + 1)]


def line_chart(series, path, title="", xlabel="t [s]", ylabel="", logy=False,
               width=720, height=360, shade=()) -> str:
    """Write an SVG with one polyline per ``(label, x, y)`` entry in ``series``.

    ``shade`` is a list of (x0, x1) intervals drawn as light bands. With
    ``logy`` non-positive values are dropped.
    """
    ml, mr, mt, mb = 70, 150, 36, 46
    pw, ph = width - ml - mr, height - mt - mb
    clean = []
    for label, x, y in series:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        if logy:
            ok &= y > 0
            y = np.where(ok, np.log10(np.where(y > 0, y, 1.0)), np.nan)
        clean.append((label, x[ok], y[ok]))
    xs = np.concatenate([c[1] for c in clean]) if clean else np.zeros(0)
    ys = np.concatenate([c[2] for c in clean]) if clean else np.zeros(0)
    x0, x1 = (float(xs.min()), float(xs.max())) if xs.size else (0.0, 1.0)
    y0, y1 = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def X(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def Y(v):
        return mt + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    for a, b in shade:
        a, b = max(a, x0), min(b, x1)
        if b > a:
            out.append(f'<rect x="{X(a):.1f}" y="{mt}" width="{X(b) - X(a):.1f}" height="{ph}" '
                       f'fill="#f2e6c9"/>')
    out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
    for v in _ticks(x0, x1):
        out.append(f'<line x1="{X(v):.1f}" y1="{mt + ph}" x2="{X(v):.1f}" y2="{mt + ph + 4}" stroke="#444"/>')
        out.append(f'<text x="{X(v):.1f}" y="{mt + ph + 16}" text-anchor="middle">{v:g}</text>')
    for v in _ticks(y0, y1):
        lab = f"1e{v:g}" if logy else f"{v:.3g}"
        out.append(f'<line x1="{ml - 4}" y1="{Y(v):.1f}" x2="{ml}" y2="{Y(v):.1f}" stroke="#444"/>')
        out.append(f'<text x="{ml - 6}" y="{Y(v) + 4:.1f}" text-anchor="end">{lab}</text>')
    for j, (label, x, y) in enumerate(clean):
        color = PALETTE[j % len(PALETTE)]
        if x.size:
            pts = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.4" points="{pts}"/>')
        ly = mt + 14 + 16 * j
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 28}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 32}" y="{ly}">{escape(str(label))}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{mt + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {mt + ph / 2})">{escape(ylabel)}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    out.append("</svg>")
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text("\n".join(out))
    return str(p)


def trace_plots(trace, outdir, prefix="") -> list:
    """Lyapunov trace, specialization traces and (if present) the input gap."""
    outdir = Path(outdir)
    made = [line_chart([("V", trace.t, trace.V)], outdir / f"{prefix}lyapunov.svg",
                       title="Lyapunov function", ylabel="log10 V", logy=True)]
    spec = [(f"s r{i + 1} t{m + 1}", trace.t, trace.spec[:, m, i])
            for m in range(trace.n_tasks) for i in range(trace.n_robots)
            if np.any(trace.spec[:, m, i] > 0)]
    if spec:
        made.append(line_chart(spec, outdir / f"{prefix}specialization.svg",
                               title="Specialization", ylabel="s"))
    if trace.uhat is not None:
        made.append(line_chart([("max |u - uhat|", trace.t, trace.input_gap())],
                               outdir / f"{prefix}input_gap.svg",
                               title="Mixed vs centralized inputs", ylabel="max |u - uhat|"))
    return made
