"""Self-contained SVG charts: line plots, histograms, box plots, grouped bars."""
from __future__ import annotations

import math
from html import escape
from pathlib import Path
from typing import Sequence

W, H = 640, 400
MARGIN = dict(left=70, right=20, top=40, bottom=55)
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


def nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("tick range must be finite")
    if hi == lo:
        pad = abs(lo) * 0.1 or 1.0
        lo, hi = lo - pad, hi + pad
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.floor(lo / step) * step
    ticks = []
    t = start
    while t <= hi + step * 1e-9:
        if t >= lo - step * 1e-9:
            ticks.append(round(t, 12))
        t += step
    return ticks


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.2e}"
    return f"{v:.4g}"


class Axes:
    def __init__(self, title: str, xlabel: str, ylabel: str, xlim, ylim):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.xticks = nice_ticks(*xlim)
        self.yticks = nice_ticks(*ylim)
        self.x0, self.x1 = min(self.xticks[0], xlim[0]), max(self.xticks[-1], xlim[1])
        self.y0, self.y1 = min(self.yticks[0], ylim[0]), max(self.yticks[-1], ylim[1])
        self.parts: list[str] = []

    def px(self, x: float) -> float:
        span = (self.x1 - self.x0) or 1.0
        return MARGIN["left"] + (x - self.x0) / span * (W - MARGIN["left"] - MARGIN["right"])

    def py(self, y: float) -> float:
        span = (self.y1 - self.y0) or 1.0
        return H - MARGIN["bottom"] - (y - self.y0) / span * (H - MARGIN["top"] - MARGIN["bottom"])

    def add(self, element: str) -> None:
        self.parts.append(element)

    def render(self, xtick_labels: dict[float, str] | None = None, legend: Sequence[tuple[str, str]] = ()) -> str:
        left, right = MARGIN["left"], W - MARGIN["right"]
        top, bottom = MARGIN["top"], H - MARGIN["bottom"]
        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
               f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
               f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
               f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(self.title)}</text>']
        for t in self.yticks:
            y = self.py(t)
            out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{right}" y2="{y:.2f}" stroke="#e5e5e5"/>')
            out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">{_fmt(t)}</text>')
        ticks = xtick_labels if xtick_labels is not None else {t: _fmt(t) for t in self.xticks}
        for t, label in ticks.items():
            x = self.px(t)
            out.append(f'<line x1="{x:.2f}" y1="{bottom}" x2="{x:.2f}" y2="{bottom + 5}" stroke="black"/>')
            out.append(f'<text x="{x:.2f}" y="{bottom + 18}" text-anchor="middle">{escape(label)}</text>')
        out.extend(self.parts)
        out.append(f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>')
        out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>')
        out.append(f'<text x="{(left + right) / 2:.1f}" y="{H - 12}" text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(f'<text x="16" y="{(top + bottom) / 2:.1f}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {(top + bottom) / 2:.1f})">{escape(self.ylabel)}</text>')
        for i, (label, color) in enumerate(legend):
            y = top + 8 + 16 * i
            out.append(f'<rect x="{right - 150}" y="{y - 9}" width="12" height="12" fill="{color}"/>')
            out.append(f'<text x="{right - 132}" y="{y + 1}">{escape(label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"


def _finite(values) -> list[float]:
    return [float(v) for v in values if v is not None and math.isfinite(float(v))]


def line_chart(series: dict[str, tuple[Sequence[float], Sequence[float]]], title: str,
               xlabel: str, ylabel: str) -> str:
    """One polyline per named series; non-finite points break the line."""
    xs = _finite(x for xv, _ in series.values() for x in xv)
    ys = _finite(y for _, yv in series.values() for y in yv)
    if not xs or not ys:
        raise ValueError("line chart needs at least one finite point")
    ax = Axes(title, xlabel, ylabel, (min(xs), max(xs)), (min(ys), max(ys)))
    legend = []
    for i, (name, (xv, yv)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        legend.append((name, color))
        run: list[str] = []
        for x, y in list(zip(xv, yv)) + [(None, None)]:
            if x is None or not math.isfinite(y):
                if len(run) > 1:
                    ax.add(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(run)}"/>')
                elif len(run) == 1:
                    cx, cy = run[0].split(",")
                    ax.add(f'<circle cx="{cx}" cy="{cy}" r="2" fill="{color}"/>')
                run = []
                continue
            run.append(f"{ax.px(x):.2f},{ax.py(y):.2f}")
    return ax.render(legend=legend if len(series) > 1 else ())


def histogram_chart(hists: dict[str, tuple[Sequence[float], Sequence[float]]], title: str,
                    xlabel: str, ylabel: str = "probability density") -> str:
    """Step outlines of density histograms given as (edges, density)."""
    xs = _finite(e for edges, _ in hists.values() for e in edges)
    ys = _finite(d for _, dens in hists.values() for d in dens) + [0.0]
    if not xs:
        raise ValueError("histogram chart needs data")
    ax = Axes(title, xlabel, ylabel, (min(xs), max(xs)), (0.0, max(ys)))
    legend = []
    for i, (name, (edges, dens)) in enumerate(hists.items()):
        color = PALETTE[i % len(PALETTE)]
        legend.append((name, color))
        for lo, hi, d in zip(edges[:-1], edges[1:], dens):
            if not math.isfinite(d):
                continue
            x, y = ax.px(lo), ax.py(d)
            ax.add(f'<rect x="{x:.2f}" y="{y:.2f}" width="{max(ax.px(hi) - x, 0.5):.2f}" '
                   f'height="{ax.py(0) - y:.2f}" fill="{color}" fill-opacity="0.35" stroke="{color}"/>')
    return ax.render(legend=legend if len(hists) > 1 else ())


def box_chart(boxes: dict[str, dict], title: str, ylabel: str) -> str:
    """Box plots from BoxStats-like dicts (q1, median, q3, whiskers, outliers)."""
    if not boxes:
        raise ValueError("box chart needs at least one box")
    ys = [v for b in boxes.values() for v in (b["min"], b["max"])]
    n = len(boxes)
    ax = Axes(title, "", ylabel, (0.5, n + 0.5), (min(ys), max(ys)))
    labels = {}
    for i, (name, b) in enumerate(boxes.items(), start=1):
        color = PALETTE[(i - 1) % len(PALETTE)]
        labels[float(i)] = name
        half = 0.25
        x0, x1, xc = ax.px(i - half), ax.px(i + half), ax.px(i)
        ax.add(f'<rect x="{x0:.2f}" y="{ax.py(b["q3"]):.2f}" width="{x1 - x0:.2f}" '
               f'height="{ax.py(b["q1"]) - ax.py(b["q3"]):.2f}" fill="{color}" fill-opacity="0.3" stroke="{color}"/>')
        ax.add(f'<line x1="{x0:.2f}" y1="{ax.py(b["median"]):.2f}" x2="{x1:.2f}" '
               f'y2="{ax.py(b["median"]):.2f}" stroke="black" stroke-width="2"/>')
        for lo, hi in ((b["whisker_low"], b["q1"]), (b["q3"], b["whisker_high"])):
            ax.add(f'<line x1="{xc:.2f}" y1="{ax.py(lo):.2f}" x2="{xc:.2f}" y2="{ax.py(hi):.2f}" stroke="{color}"/>')
        for w in (b["whisker_low"], b["whisker_high"]):
            ax.add(f'<line x1="{ax.px(i - half / 2):.2f}" y1="{ax.py(w):.2f}" x2="{ax.px(i + half / 2):.2f}" '
                   f'y2="{ax.py(w):.2f}" stroke="{color}"/>')
        for o in b.get("outliers", []):
            ax.add(f'<circle cx="{xc:.2f}" cy="{ax.py(o):.2f}" r="2.5" fill="none" stroke="{color}"/>')
    ax.xticks = []
    return ax.render(xtick_labels=labels)


def bar_chart(groups: Sequence[str], series: dict[str, Sequence[float]], title: str, ylabel: str) -> str:
    """Grouped vertical bars: one group per label, one bar per series."""
    if not groups or not series:
        raise ValueError("bar chart needs groups and series")
    vals = _finite(v for s in series.values() for v in s) + [0.0]
    ax = Axes(title, "", ylabel, (0.5, len(groups) + 0.5), (min(vals), max(vals)))
    k = len(series)
    width = 0.8 / k
    legend = []
    for j, (name, values) in enumerate(series.items()):
        color = PALETTE[j % len(PALETTE)]
        legend.append((name, color))
        for i, v in enumerate(values, start=1):
            left = i - 0.4 + j * width
            x0, x1 = ax.px(left), ax.px(left + width)
            y0, yv = ax.py(0.0), ax.py(v)
            ax.add(f'<rect x="{x0:.2f}" y="{min(y0, yv):.2f}" width="{x1 - x0:.2f}" '
                   f'height="{abs(y0 - yv):.2f}" fill="{color}"/>')
    ticks = {float(i): g for i, g in enumerate(groups, start=1)} if len(groups) <= 40 else \
        {float(i): g for i, g in enumerate(groups, start=1) if i % max(1, len(groups) // 20) == 0}
    return ax.render(xtick_labels=ticks, legend=legend)


def write_svg(text: str, path) -> Path:
    path = Path(path)
    path.write_text(text)
    return path
