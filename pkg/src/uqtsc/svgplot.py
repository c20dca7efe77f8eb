"""Deterministic SVG chart emission.

Everything is assembled from plain text with fixed number formatting, so
identical inputs produce identical bytes — reruns can be diffed.  Just
the four chart types the report command needs, nothing general-purpose.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 440
ML, MR, MT, MB = 70, 24, 44, 62  # margins: left, right, top, bottom
PALETTE = ("#3366cc", "#dc3912", "#ff9900", "#109618", "#990099",
           "#0099c6", "#dd4477", "#66aa00")
OUTCOME_ORDER = ("TN", "TP", "FN", "FP")
OUTCOME_COLORS = {"TN": "#109618", "TP": "#3366cc",
                  "FN": "#dc3912", "FP": "#ff9900"}


def _f(x) -> str:
    s = f"{float(x):.4f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


class Canvas:
    def __init__(self, width: int = WIDTH, height: int = HEIGHT):
        self.width, self.height = width, height
        self._parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
        ]

    def line(self, x1, y1, x2, y2, color="#555555", width=1.0, dash=""):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self._parts.append(
            f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
            f'stroke="{color}" stroke-width="{_f(width)}"{d}/>')

    def rect(self, x, y, w, h, color):
        self._parts.append(
            f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" '
            f'height="{_f(h)}" fill="{color}"/>')

    def circle(self, cx, cy, r, color, opacity=1.0):
        o = "" if opacity >= 1.0 else f' fill-opacity="{_f(opacity)}"'
        self._parts.append(
            f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="{_f(r)}" '
            f'fill="{color}"{o}/>')

    def polyline(self, points, color, width=1.8):
        pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in points)
        self._parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{_f(width)}"/>')

    def text(self, x, y, s, size=12, anchor="start", color="#222222",
             rotate=None):
        t = f' transform="rotate({_f(rotate)} {_f(x)} {_f(y)})"' if rotate \
            else ""
        self._parts.append(
            f'<text x="{_f(x)}" y="{_f(y)}" font-family="sans-serif" '
            f'font-size="{size}" text-anchor="{anchor}" '
            f'fill="{color}"{t}>{escape(str(s))}</text>')

    def render(self) -> str:
        return "\n".join(self._parts + ["</svg>"]) + "\n"


class Frame:
    """Maps data coordinates into the plot rectangle."""

    def __init__(self, canvas: Canvas, x_min, x_max, y_min, y_max):
        self.c = canvas
        self.x_min, self.x_max = float(x_min), float(x_max)
        self.y_min, self.y_max = float(y_min), float(y_max)
        self.x0, self.y0 = ML, canvas.height - MB
        self.x1, self.y1 = canvas.width - MR, MT

    def px(self, x) -> float:
        span = self.x_max - self.x_min
        return self.x0 + (float(x) - self.x_min) / span * (self.x1 - self.x0)

    def py(self, y) -> float:
        span = self.y_max - self.y_min
        return self.y0 + (float(y) - self.y_min) / span * (self.y1 - self.y0)

    def axes(self, title, xlabel, ylabel, x_ticks=None, y_ticks=None):
        c = self.c
        c.line(self.x0, self.y0, self.x1, self.y0)
        c.line(self.x0, self.y0, self.x0, self.y1)
        c.text((self.x0 + self.x1) / 2, MT - 18, title, size=15,
               anchor="middle")
        c.text((self.x0 + self.x1) / 2, c.height - 16, xlabel,
               anchor="middle")
        c.text(20, (self.y0 + self.y1) / 2, ylabel, anchor="middle",
               rotate=-90)
        for xv in (x_ticks if x_ticks is not None
                   else np.linspace(self.x_min, self.x_max, 6)):
            px = self.px(xv)
            c.line(px, self.y0, px, self.y0 + 4)
            c.text(px, self.y0 + 18, _f(xv), size=10, anchor="middle")
        for yv in (y_ticks if y_ticks is not None
                   else np.linspace(self.y_min, self.y_max, 6)):
            py = self.py(yv)
            c.line(self.x0 - 4, py, self.x0, py)
            c.text(self.x0 - 8, py + 3, _f(yv), size=10, anchor="end")


def reliability_diagram(series) -> str:
    """series: (label, bins) pairs, each bin carrying count/e_i/o_i."""
    c = Canvas()
    fr = Frame(c, 0.0, 1.0, 0.0, 1.0)
    fr.axes("Reliability diagram", "mean confidence", "observed accuracy")
    c.line(fr.px(0), fr.py(0), fr.px(1), fr.py(1), color="#999999",
           dash="5,4")
    for i, (label, bins) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = [(fr.px(b.e_i), fr.py(b.o_i)) for b in bins if b.count > 0]
        if len(pts) > 1:
            c.polyline(pts, color)
        for x, y in pts:
            c.circle(x, y, 3.2, color)
        c.circle(fr.x1 - 150, MT + 14 * i + 6, 4, color)
        c.text(fr.x1 - 140, MT + 14 * i + 10, label, size=11)
    return c.render()


def bar_chart(labels, values, title, ylabel) -> str:
    c = Canvas()
    top = max([v for v in values if np.isfinite(v)] + [0.0])
    top = top * 1.15 if top > 0 else 1.0
    fr = Frame(c, 0.0, float(len(labels)), 0.0, top)
    fr.axes(title, "", ylabel, x_ticks=[])
    width = 0.6
    for i, (label, v) in enumerate(zip(labels, values)):
        color = PALETTE[i % len(PALETTE)]
        x = fr.px(i + 0.5 - width / 2)
        w = fr.px(width) - fr.px(0)
        c.rect(x, fr.py(v), w, fr.y0 - fr.py(v), color)
        c.text(fr.px(i + 0.5), fr.py(v) - 5, _f(v), size=10, anchor="middle")
        c.text(fr.px(i + 0.5), fr.y0 + 18, label, size=10, anchor="middle")
    return c.render()


def outcome_scatter(groups: dict, title: str) -> str:
    """Entropy per sample, grouped by prediction outcome.

    groups maps outcome tag -> array of entropies; one marker per sample,
    spread deterministically inside its column.
    """
    all_vals = [v for arr in groups.values() for v in np.atleast_1d(arr)]
    y_top = max(all_vals + [np.log(2.0)]) * 1.1
    c = Canvas()
    fr = Frame(c, 0.0, float(len(OUTCOME_ORDER)), 0.0, y_top)
    fr.axes(title, "prediction outcome", "predictive entropy", x_ticks=[])
    for k, tag in enumerate(OUTCOME_ORDER):
        vals = np.atleast_1d(groups.get(tag, np.zeros(0)))
        c.text(fr.px(k + 0.5), fr.y0 + 18, f"{tag} (n={vals.size})",
               size=11, anchor="middle")
        n = max(vals.size, 1)
        for i, v in enumerate(vals):
            x = k + 0.5 + ((i + 0.5) / n - 0.5) * 0.7
            c.circle(fr.px(x), fr.py(v), 2.4, OUTCOME_COLORS[tag],
                     opacity=0.75)
        if vals.size:
            mean_y = fr.py(float(vals.mean()))
            c.line(fr.px(k + 0.15), mean_y, fr.px(k + 0.85), mean_y,
                   color="#333333", width=1.6)
    return c.render()
