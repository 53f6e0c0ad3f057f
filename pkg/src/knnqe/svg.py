"""Small self-contained SVG plots for reports.

Nothing here aims to be a plotting library: two chart shapes cover
what the reports need, and emitting SVG text directly keeps the
package free of graphics dependencies.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

PALETTE = ["#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377", "#bbbbbb"]

_W, _H = 640, 440
_ML, _MR, _MT, _MB = 70, 20, 40, 55


def _limits(values: list[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if lo == hi:
        pad = 0.5 if lo == 0 else abs(lo) * 0.1
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.08
    return lo - pad, hi + pad


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _fmt(v: float) -> str:
    return f"{v:.4g}"


class _Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str,
                 xlim: tuple[float, float], ylim: tuple[float, float]):
        self.parts: list[str] = []
        self.xlim, self.ylim = xlim, ylim
        self.parts.append(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">'
        )
        self.parts.append(f'<rect width="{_W}" height="{_H}" fill="white"/>')
        self.parts.append(
            f'<text x="{_W / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>'
        )
        for tv in _ticks(*xlim):
            x = self.px(tv)
            self.parts.append(
                f'<line x1="{x:.1f}" y1="{_MT}" x2="{x:.1f}" y2="{_H - _MB}" stroke="#e0e0e0"/>'
            )
            self.parts.append(
                f'<text x="{x:.1f}" y="{_H - _MB + 16}" text-anchor="middle">{_fmt(tv)}</text>'
            )
        for tv in _ticks(*ylim):
            y = self.py(tv)
            self.parts.append(
                f'<line x1="{_ML}" y1="{y:.1f}" x2="{_W - _MR}" y2="{y:.1f}" stroke="#e0e0e0"/>'
            )
            self.parts.append(
                f'<text x="{_ML - 6}" y="{y + 4:.1f}" text-anchor="end">{_fmt(tv)}</text>'
            )
        self.parts.append(
            f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" height="{_H - _MT - _MB}" '
            f'fill="none" stroke="#333"/>'
        )
        self.parts.append(
            f'<text x="{(_ML + _W - _MR) / 2}" y="{_H - 12}" text-anchor="middle">{escape(xlabel)}</text>'
        )
        self.parts.append(
            f'<text x="16" y="{(_MT + _H - _MB) / 2}" text-anchor="middle" '
            f'transform="rotate(-90 16 {(_MT + _H - _MB) / 2})">{escape(ylabel)}</text>'
        )

    def px(self, v: float) -> float:
        lo, hi = self.xlim
        return _ML + (v - lo) / (hi - lo) * (_W - _ML - _MR)

    def py(self, v: float) -> float:
        lo, hi = self.ylim
        return (_H - _MB) - (v - lo) / (hi - lo) * (_H - _MT - _MB)

    def finish(self) -> str:
        self.parts.append("</svg>")
        return "\n".join(self.parts)


def scatter_svg(
    points: list[tuple[float, float, str]],
    xlabel: str,
    ylabel: str,
    title: str,
) -> str:
    """Labeled scatter plot; each point is (x, y, label)."""
    if not points:
        raise ValueError("cannot plot an empty point set")
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    c = _Canvas(title, xlabel, ylabel, _limits(xs), _limits(ys))
    for i, (x, y, label) in enumerate(points):
        color = PALETTE[i % len(PALETTE)]
        c.parts.append(
            f'<circle cx="{c.px(x):.1f}" cy="{c.py(y):.1f}" r="4" fill="{color}" '
            f'fill-opacity="0.85"/>'
        )
        if label:
            c.parts.append(
                f'<text x="{c.px(x) + 6:.1f}" y="{c.py(y) - 5:.1f}" fill="#333">'
                f"{escape(label)}</text>"
            )
    return c.finish()


def line_svg(
    series: dict[str, list[tuple[float, float]]],
    xlabel: str,
    ylabel: str,
    title: str,
) -> str:
    """Multi-series line chart with a legend; series map name to points."""
    if not series or all(not pts for pts in series.values()):
        raise ValueError("cannot plot an empty series set")
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    c = _Canvas(title, xlabel, ylabel, _limits(xs), _limits(ys))
    for i, (name, pts) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = sorted(pts)
        path = " ".join(
            f"{'M' if j == 0 else 'L'}{c.px(x):.1f},{c.py(y):.1f}" for j, (x, y) in enumerate(pts)
        )
        c.parts.append(f'<path d="{path}" fill="none" stroke="{color}" stroke-width="1.8"/>')
        for x, y in pts:
            c.parts.append(
                f'<circle cx="{c.px(x):.1f}" cy="{c.py(y):.1f}" r="3" fill="{color}"/>'
            )
        ly = _MT + 14 + i * 16
        c.parts.append(
            f'<line x1="{_W - _MR - 130}" y1="{ly - 4}" x2="{_W - _MR - 110}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        c.parts.append(f'<text x="{_W - _MR - 104}" y="{ly}">{escape(name)}</text>')
    return c.finish()
