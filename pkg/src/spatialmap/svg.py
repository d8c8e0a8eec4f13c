"""Minimal deterministic SVG 1.1 writer for line plots and raster heatmaps."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

# fixed colours per distance group so output diffs stay stable
GROUP_COLORS = {
    "sample-to-sample": "#1b9e77",
    "prediction-to-sample": "#d95f02",
    "CV-distances": "#7570b3",
    "test-to-sample": "#e7298a",
}
FALLBACK_COLORS = ["#66a61e", "#e6ab02", "#a6761d", "#666666"]

PALETTES = {
    "viridis": ["#440154", "#3b528b", "#21918c", "#5ec962", "#fde725"],
    "magma": ["#000004", "#51127c", "#b73779", "#fc8961", "#fcfdbf"],
    "grey": ["#000000", "#ffffff"],
}


def _f(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float) -> str:
    return f"{v:.4g}"


class Plot:
    """Line/scatter plot on a fixed canvas with linear axes."""

    def __init__(self, xlim, ylim, width=640, height=400, title="", xlabel="", ylabel=""):
        self.width, self.height = width, height
        self.left, self.right, self.top, self.bottom = 70, 160, 40, 50
        x0, x1 = xlim
        y0, y1 = ylim
        if x1 <= x0:
            x0, x1 = x0 - 0.5, x0 + 0.5
        if y1 <= y0:
            y0, y1 = y0 - 0.5, y0 + 0.5
        self.xlim, self.ylim = (x0, x1), (y0, y1)
        self.items = []
        self.legend = []
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel

    def sx(self, x):
        x0, x1 = self.xlim
        return self.left + (x - x0) / (x1 - x0) * (self.width - self.left - self.right)

    def sy(self, y):
        y0, y1 = self.ylim
        return self.height - self.bottom - (y - y0) / (y1 - y0) * (self.height - self.top - self.bottom)

    def line(self, xs, ys, color, label=None, width=1.5, dash=None):
        pts = " ".join(f"{_f(self.sx(x))},{_f(self.sy(y))}" for x, y in zip(xs, ys))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.items.append(f'<polyline fill="none" stroke="{color}" stroke-width="{width}"{extra} points="{pts}"/>')
        if label:
            self.legend.append((label, color))

    def points(self, xs, ys, color, label=None, r=2.0):
        for x, y in zip(xs, ys):
            self.items.append(f'<circle cx="{_f(self.sx(x))}" cy="{_f(self.sy(y))}" r="{r}" fill="{color}" fill-opacity="0.5"/>')
        if label:
            self.legend.append((label, color))

    def _axes(self):
        out = []
        xa, ya = self.sx(self.xlim[0]), self.sy(self.ylim[0])
        xb, yb = self.sx(self.xlim[1]), self.sy(self.ylim[1])
        out.append(f'<line x1="{_f(xa)}" y1="{_f(ya)}" x2="{_f(xb)}" y2="{_f(ya)}" stroke="black"/>')
        out.append(f'<line x1="{_f(xa)}" y1="{_f(ya)}" x2="{_f(xa)}" y2="{_f(yb)}" stroke="black"/>')
        for t in np.linspace(self.xlim[0], self.xlim[1], 5):
            out.append(f'<text x="{_f(self.sx(t))}" y="{_f(ya + 16)}" font-size="10" text-anchor="middle">{_tick_label(t)}</text>')
        for t in np.linspace(self.ylim[0], self.ylim[1], 5):
            out.append(f'<text x="{_f(xa - 6)}" y="{_f(self.sy(t) + 3)}" font-size="10" text-anchor="end">{_tick_label(t)}</text>')
        if self.xlabel:
            out.append(f'<text x="{_f((xa + xb) / 2)}" y="{_f(self.height - 10)}" font-size="12" text-anchor="middle">{escape(self.xlabel)}</text>')
        if self.ylabel:
            out.append(f'<text x="14" y="{_f((ya + yb) / 2)}" font-size="12" text-anchor="middle" '
                       f'transform="rotate(-90 14 {_f((ya + yb) / 2)})">{escape(self.ylabel)}</text>')
        if self.title:
            out.append(f'<text x="{_f(self.width / 2)}" y="20" font-size="14" text-anchor="middle">{escape(self.title)}</text>')
        for j, (label, color) in enumerate(self.legend):
            y = self.top + 14 + 18 * j
            x = self.width - self.right + 12
            out.append(f'<line x1="{x}" y1="{y}" x2="{x + 20}" y2="{y}" stroke="{color}" stroke-width="3"/>')
            out.append(f'<text x="{x + 26}" y="{y + 4}" font-size="11">{escape(label)}</text>')
        return out

    def to_svg(self) -> str:
        body = self._axes() + self.items
        return svg_document(self.width, self.height, body)


def svg_document(width, height, body, background="white") -> str:
    head = (f'<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n')
    if background:
        head += f'<rect x="0" y="0" width="{width}" height="{height}" fill="{background}"/>\n'
    return head + "\n".join(body) + "\n</svg>\n"


def _hex(color: str):
    return tuple(int(color[i:i + 2], 16) for i in (1, 3, 5))


def ramp(values: np.ndarray, palette: str = "viridis", vmin=None, vmax=None):
    """Map values linearly onto a colour ramp; returns list of hex strings."""
    stops = np.array([_hex(c) for c in PALETTES[palette]], dtype=np.float64)
    vmin = float(np.min(values)) if vmin is None else vmin
    vmax = float(np.max(values)) if vmax is None else vmax
    span = vmax - vmin if vmax > vmin else 1.0
    t = np.clip((np.asarray(values, dtype=np.float64) - vmin) / span, 0.0, 1.0)
    pos = t * (len(stops) - 1)
    lo = np.minimum(np.floor(pos).astype(int), len(stops) - 2)
    frac = (pos - lo)[:, None]
    rgb = np.rint(stops[lo] * (1 - frac) + stops[lo + 1] * frac).astype(int)
    return ["#%02x%02x%02x" % tuple(c) for c in rgb]


def heatmap(values: np.ndarray, palette="viridis", title="", cell_px=None) -> str:
    """Render a 2-D array (NaN = transparent) with a legend bar."""
    values = np.asarray(values, dtype=np.float64)
    nrows, ncols = values.shape
    cell = cell_px or max(1.0, min(8.0, 600.0 / max(nrows, ncols)))
    mw, mh = ncols * cell, nrows * cell
    width, height = int(mw + 140), int(mh + 60)
    valid = np.isfinite(values)
    body = []
    if title:
        body.append(f'<text x="{_f(width / 2)}" y="18" font-size="14" text-anchor="middle">{escape(title)}</text>')
    if valid.any():
        vmin, vmax = float(values[valid].min()), float(values[valid].max())
        colors = ramp(values[valid], palette, vmin, vmax)
        rr, cc = np.nonzero(valid)
        for r, c, col in zip(rr, cc, colors):
            body.append(f'<rect x="{_f(10 + c * cell)}" y="{_f(30 + r * cell)}" width="{_f(cell)}" height="{_f(cell)}" fill="{col}"/>')
        steps = 20
        for j, col in enumerate(ramp(np.linspace(vmax, vmin, steps), palette, vmin, vmax)):
            body.append(f'<rect x="{_f(mw + 30)}" y="{_f(30 + j * mh / steps)}" width="20" height="{_f(mh / steps + 0.5)}" fill="{col}"/>')
        body.append(f'<text x="{_f(mw + 56)}" y="40" font-size="10">{_tick_label(vmax)}</text>')
        body.append(f'<text x="{_f(mw + 56)}" y="{_f(30 + mh)}" font-size="10">{_tick_label(vmin)}</text>')
    # no page background, so nodata cells stay transparent
    return svg_document(width, height, body, background=None)
