"""Minimal deterministic SVG charts: lines, scatter, state-coloured tracks.

Plots are pure functions of the data handed in — nothing is recomputed
here — and every coordinate is formatted with a fixed precision so
identical inputs produce byte-identical files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PALETTE = ("#1b6ca8", "#d1495b", "#66a182", "#edae49", "#8d5a97", "#5d5d5d")

_W, _H = 720.0, 480.0
_ML, _MR, _MT, _MB = 64.0, 20.0, 34.0, 52.0


@dataclass(frozen=True)
class Line:
    x: np.ndarray
    y: np.ndarray
    color: str = PALETTE[0]
    width: float = 1.5
    opacity: float = 1.0
    dashed: bool = False
    label: str = ""


@dataclass(frozen=True)
class Scatter:
    x: np.ndarray
    y: np.ndarray
    color: str = PALETTE[0]
    radius: float = 1.6
    opacity: float = 0.35
    label: str = ""


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, target: int = 6) -> list[float]:
    """Round tick positions covering [lo, hi]."""
    span = hi - lo
    if span <= 0:
        return [lo]
    raw = span / target
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * span:
        ticks.append(0.0 if abs(t) < step * 1e-9 else t)
        t += step
    return ticks


def _tick_label(v: float) -> str:
    if v == int(v) and abs(v) < 1e6:
        return str(int(v))
    return f"{v:.4g}"


@dataclass
class _Frame:
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float
    parts: list[str] = field(default_factory=list)

    def px(self, x: float) -> float:
        return _ML + (x - self.x_lo) / (self.x_hi - self.x_lo) * (_W - _ML - _MR)

    def py(self, y: float) -> float:
        return _H - _MB - (y - self.y_lo) / (self.y_hi - self.y_lo) * (_H - _MT - _MB)


def _finite_range(arrays, pad_frac=0.04, fallback=(0.0, 1.0)):
    vals = np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays]) if arrays else np.array([])
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return fallback
    lo, hi = float(vals.min()), float(vals.max())
    if hi <= lo:
        pad = max(abs(lo), 1.0) * 0.05
        return lo - pad, hi + pad
    pad = (hi - lo) * pad_frac
    return lo - pad, hi + pad


def _polyline_chunks(fr: _Frame, x: np.ndarray, y: np.ndarray) -> list[str]:
    """Split at NaN so gaps stay gaps."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y)
    chunks, cur = [], []
    for i in range(x.size):
        if ok[i]:
            cur.append(f"{_fmt(fr.px(x[i]))},{_fmt(fr.py(y[i]))}")
        elif cur:
            chunks.append(" ".join(cur))
            cur = []
    if cur:
        chunks.append(" ".join(cur))
    return [c for c in chunks if c]


def _axes(fr: _Frame, x_label: str, y_label: str, title: str) -> None:
    p = fr.parts
    p.append(
        f'<rect x="{_fmt(_ML)}" y="{_fmt(_MT)}" width="{_fmt(_W - _ML - _MR)}" '
        f'height="{_fmt(_H - _MT - _MB)}" fill="none" stroke="#444" stroke-width="1"/>'
    )
    for t in _ticks(fr.x_lo, fr.x_hi):
        px = fr.px(t)
        p.append(f'<line x1="{_fmt(px)}" y1="{_fmt(_H - _MB)}" x2="{_fmt(px)}" '
                 f'y2="{_fmt(_H - _MB + 5)}" stroke="#444" stroke-width="1"/>')
        p.append(f'<text x="{_fmt(px)}" y="{_fmt(_H - _MB + 18)}" font-size="11" '
                 f'text-anchor="middle" fill="#222">{_tick_label(t)}</text>')
    for t in _ticks(fr.y_lo, fr.y_hi):
        py = fr.py(t)
        p.append(f'<line x1="{_fmt(_ML - 5)}" y1="{_fmt(py)}" x2="{_fmt(_ML)}" '
                 f'y2="{_fmt(py)}" stroke="#444" stroke-width="1"/>')
        p.append(f'<text x="{_fmt(_ML - 8)}" y="{_fmt(py + 4)}" font-size="11" '
                 f'text-anchor="end" fill="#222">{_tick_label(t)}</text>')
    p.append(f'<text x="{_fmt((_ML + _W - _MR) / 2)}" y="{_fmt(_H - 14)}" font-size="13" '
             f'text-anchor="middle" fill="#000">{x_label}</text>')
    p.append(f'<text x="16" y="{_fmt((_MT + _H - _MB) / 2)}" font-size="13" '
             f'text-anchor="middle" fill="#000" transform="rotate(-90 16 '
             f'{_fmt((_MT + _H - _MB) / 2)})">{y_label}</text>')
    if title:
        p.append(f'<text x="{_fmt(_W / 2)}" y="20" font-size="14" text-anchor="middle" '
                 f'fill="#000">{title}</text>')


def _legend(fr: _Frame, entries: list[tuple[str, str, bool]]) -> None:
    x0, y0 = _ML + 10.0, _MT + 14.0
    for k, (label, color, dashed) in enumerate(entries):
        y = y0 + 16.0 * k
        dash = ' stroke-dasharray="6 4"' if dashed else ""
        fr.parts.append(f'<line x1="{_fmt(x0)}" y1="{_fmt(y - 4)}" x2="{_fmt(x0 + 22)}" '
                        f'y2="{_fmt(y - 4)}" stroke="{color}" stroke-width="2.5"{dash}/>')
        fr.parts.append(f'<text x="{_fmt(x0 + 28)}" y="{_fmt(y)}" font-size="11" '
                        f'fill="#222">{label}</text>')


def _write(path, parts: list[str]) -> None:
    body = "\n".join(parts)
    with open(path, "w") as fh:
        fh.write(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{int(_W)}" '
            f'height="{int(_H)}" viewBox="0 0 {int(_W)} {int(_H)}">\n'
            f'<rect width="{int(_W)}" height="{int(_H)}" fill="#ffffff"/>\n'
            f"{body}\n</svg>\n"
        )


def plot_lines(
    path,
    lines: list[Line],
    scatters: list[Scatter] = (),
    x_label: str = "",
    y_label: str = "",
    title: str = "",
    y_range: tuple[float, float] | None = None,
) -> None:
    """Line/scatter chart; NaN values break lines; legend from labels."""
    xs = [l.x for l in lines] + [s.x for s in scatters]
    ys = [l.y for l in lines] + [s.y for s in scatters]
    x_lo, x_hi = _finite_range(xs)
    y_lo, y_hi = y_range if y_range is not None else _finite_range(ys)
    fr = _Frame(x_lo, x_hi, y_lo, y_hi)
    _axes(fr, x_label, y_label, title)
    for s in scatters:
        x = np.asarray(s.x, dtype=float)
        y = np.asarray(s.y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y) & (x >= x_lo) & (x <= x_hi)
        for xi, yi in zip(x[ok], y[ok]):
            fr.parts.append(
                f'<circle cx="{_fmt(fr.px(xi))}" cy="{_fmt(fr.py(yi))}" '
                f'r="{s.radius}" fill="{s.color}" fill-opacity="{s.opacity}"/>'
            )
    for l in lines:
        dash = ' stroke-dasharray="6 4"' if l.dashed else ""
        for chunk in _polyline_chunks(fr, l.x, l.y):
            fr.parts.append(
                f'<polyline points="{chunk}" fill="none" stroke="{l.color}" '
                f'stroke-width="{l.width}" stroke-opacity="{l.opacity}"{dash}/>'
            )
    entries = [(l.label, l.color, l.dashed) for l in lines if l.label]
    entries += [(s.label, s.color, False) for s in scatters if s.label]
    if entries:
        _legend(fr, entries)
    _write(path, fr.parts)


def plot_track(
    path,
    x: np.ndarray,
    y: np.ndarray,
    states: np.ndarray,
    title: str = "",
    x_label: str = "x",
    y_label: str = "y",
) -> None:
    """Track polyline, each step coloured by the state at its endpoint."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    states = np.asarray(states)
    x_lo, x_hi = _finite_range([x])
    y_lo, y_hi = _finite_range([y])
    fr = _Frame(x_lo, x_hi, y_lo, y_hi)
    _axes(fr, x_label, y_label, title)
    for t in range(1, x.size):
        if not (np.isfinite(x[t - 1]) and np.isfinite(x[t])
                and np.isfinite(y[t - 1]) and np.isfinite(y[t])):
            continue
        color = PALETTE[int(states[t]) % len(PALETTE)]
        fr.parts.append(
            f'<line x1="{_fmt(fr.px(x[t - 1]))}" y1="{_fmt(fr.py(y[t - 1]))}" '
            f'x2="{_fmt(fr.px(x[t]))}" y2="{_fmt(fr.py(y[t]))}" '
            f'stroke="{color}" stroke-width="1.5" stroke-opacity="0.9"/>'
        )
    seen = []
    for s in states:
        si = int(s)
        if si not in seen:
            seen.append(si)
    _legend(fr, [(f"state {si + 1}", PALETTE[si % len(PALETTE)], False) for si in sorted(seen)])
    _write(path, fr.parts)
