"""Static SVG charts written as plain text; output depends only on the inputs."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

PALETTE = ("#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377", "#bbbbbb")
FONT = 'font-family="sans-serif" font-size="11"'


def _n(x: float) -> str:
    return f"{x:.2f}"


class Canvas:
    def __init__(self, width: int, height: int, title: str):
        self.width = width
        self.height = height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        ]
        self.text(width / 2, 18, title, anchor="middle", size=13)

    def rect(self, x, y, w, h, fill, stroke="none") -> None:
        self.parts.append(f'<rect x="{_n(x)}" y="{_n(y)}" width="{_n(w)}" height="{_n(h)}" fill="{fill}" stroke="{stroke}"/>')

    def line(self, x1, y1, x2, y2, stroke="#333333") -> None:
        self.parts.append(f'<line x1="{_n(x1)}" y1="{_n(y1)}" x2="{_n(x2)}" y2="{_n(y2)}" stroke="{stroke}"/>')

    def text(self, x, y, content, anchor="start", size=None) -> None:
        font = FONT if size is None else f'font-family="sans-serif" font-size="{size}"'
        self.parts.append(f'<text x="{_n(x)}" y="{_n(y)}" text-anchor="{anchor}" {font}>{escape(str(content))}</text>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _axis_range(values: Sequence[float], include_zero: bool = True) -> tuple[float, float]:
    finite = [v for v in values if math.isfinite(v)]
    lo = min(finite + [0.0] if include_zero else finite, default=0.0)
    hi = max(finite + [0.0] if include_zero else finite, default=1.0)
    if hi == lo:
        hi = lo + 1.0
    return lo, hi


def bar_chart(title: str, labels: Sequence[str], series: dict[str, Sequence[float]], unit: str = "") -> str:
    """Grouped vertical bars: one group per label, one bar per series."""
    width, height = 120 + 90 * max(1, len(labels)), 320
    left, right, top, bottom = 60, 20, 40, 70
    c = Canvas(width, height, title)
    values = [v for vs in series.values() for v in vs]
    lo, hi = _axis_range(values)
    plot_h = height - top - bottom
    y_of = lambda v: top + (hi - v) / (hi - lo) * plot_h  # noqa: E731
    c.line(left, top, left, height - bottom)
    c.line(left, y_of(0.0), width - right, y_of(0.0))
    for tick in (lo, (lo + hi) / 2, hi):
        c.text(left - 4, y_of(tick) + 4, f"{tick:.3g}", anchor="end")
    group_w = (width - left - right) / max(1, len(labels))
    bar_w = group_w * 0.8 / max(1, len(series))
    for g, label in enumerate(labels):
        x0 = left + g * group_w + group_w * 0.1
        for s, (name, vs) in enumerate(series.items()):
            v = vs[g]
            if not math.isfinite(v):
                continue
            y1, y2 = sorted((y_of(v), y_of(0.0)))
            c.rect(x0 + s * bar_w, y1, bar_w * 0.9, y2 - y1, PALETTE[s % len(PALETTE)])
        c.text(x0 + group_w * 0.4, height - bottom + 14, label, anchor="middle")
    for s, name in enumerate(series):
        c.rect(left + 120 * s, height - 24, 10, 10, PALETTE[s % len(PALETTE)])
        c.text(left + 120 * s + 14, height - 15, name)
    if unit:
        c.text(8, top - 8, unit)
    return c.render()


def box_summary(title: str, stats: dict[str, dict[str, float]]) -> str:
    """Box plots from precomputed min/p25/p50/p75/max/mean summaries."""
    names = list(stats)
    width, height = 120 + 90 * max(1, len(names)), 320
    left, right, top, bottom = 60, 20, 40, 50
    c = Canvas(width, height, title)
    lo, hi = _axis_range([v for s in stats.values() for k, v in s.items() if k != "count"], include_zero=False)
    plot_h = height - top - bottom
    y_of = lambda v: top + (hi - v) / (hi - lo) * plot_h  # noqa: E731
    c.line(left, top, left, height - bottom)
    for tick in (lo, (lo + hi) / 2, hi):
        c.text(left - 4, y_of(tick) + 4, f"{tick:.3g}", anchor="end")
    slot = (width - left - right) / max(1, len(names))
    for i, name in enumerate(names):
        s = stats[name]
        cx = left + slot * (i + 0.5)
        half = slot * 0.25
        c.line(cx, y_of(s["min"]), cx, y_of(s["p25"]))
        c.line(cx, y_of(s["p75"]), cx, y_of(s["max"]))
        c.rect(cx - half, y_of(s["p75"]), 2 * half, y_of(s["p25"]) - y_of(s["p75"]), PALETTE[i % len(PALETTE)], "#333333")
        c.line(cx - half, y_of(s["p50"]), cx + half, y_of(s["p50"]), "#000000")
        c.text(cx, y_of(s["mean"]) + 4, "x", anchor="middle")
        c.text(cx, height - bottom + 14, name, anchor="middle")
        c.text(cx, height - bottom + 28, f"mean {s['mean']:.2f}", anchor="middle")
    return c.render()


def horizontal_bars(title: str, items: Sequence[tuple[str, float]]) -> str:
    """Ranked horizontal bars, first item on top."""
    width, row_h = 460, 22
    height = 50 + row_h * max(1, len(items))
    left = 110
    c = Canvas(width, height, title)
    top = max((v for _, v in items), default=1.0) or 1.0
    for i, (name, value) in enumerate(items):
        y = 32 + i * row_h
        w = (width - left - 80) * (value / top if math.isfinite(value) and top > 0 else 0.0)
        c.text(left - 6, y + 14, name, anchor="end")
        c.rect(left, y + 3, max(w, 0.0), row_h - 6, PALETTE[0])
        c.text(left + max(w, 0.0) + 4, y + 14, f"{value:.4g}")
    return c.render()


def _heat_colour(r: float) -> str:
    if not math.isfinite(r):
        return "#dddddd"
    r = max(-1.0, min(1.0, r))
    # blue for negative, red for positive, white at zero
    fade = int(round(255 * (1 - abs(r))))
    return f"#ff{fade:02x}{fade:02x}" if r >= 0 else f"#{fade:02x}{fade:02x}ff"


def heat_table(title: str, names: Sequence[str], matrix) -> str:
    cell = 54
    left, top = 90, 40
    size = len(names)
    c = Canvas(left + cell * size + 20, top + 20 + cell * size + 20, title)
    for j, name in enumerate(names):
        c.text(left + cell * (j + 0.5), top + 12, name[:8], anchor="middle", size=9)
    for i, name in enumerate(names):
        y = top + 20 + cell * i
        c.text(left - 4, y + cell / 2 + 4, name, anchor="end", size=9)
        for j in range(size):
            r = float(matrix[i][j])
            c.rect(left + cell * j, y, cell, cell, _heat_colour(r), "#ffffff")
            c.text(left + cell * (j + 0.5), y + cell / 2 + 4, "n/a" if not math.isfinite(r) else f"{r:.2f}", anchor="middle", size=10)
    return c.render()


def write_svg(text: str, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(text, encoding="utf-8")
    return path
