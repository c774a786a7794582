"""Deterministic CSV and SVG writers.

Floats are written with 17 significant digits so that a value read back is
bit-identical and repeated runs produce identical bytes.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 960, 540
_MARGIN = dict(left=80, right=20, top=40, bottom=60)
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def fmt(value) -> str:
    """Cell text: ``%.17g`` for reals, ``inf``/``nan`` spelled out, empty for ``None``."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """RFC 4180 CSV (CRLF line ends, minimal quoting) with a header row."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def write_matrix_csv(path: str | Path, A: np.ndarray, labels: Sequence[str]) -> Path:
    """Square matrix with its state labels on both axes."""
    A = np.asarray(A)
    return write_csv(path, ["", *labels], ([lab, *row] for lab, row in zip(labels, A)))


def _ticks(lo: float, hi: float, count: int = 6) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / (count - 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return out


def _num(v: float) -> str:
    return "%.2f" % v


def line_chart(
    path: str | Path,
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    *,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    markers: bool = False,
    max_points: int = 4000,
) -> Path:
    """One polyline per ``(label, x, y)`` series on a fixed 960x540 canvas.

    Non-finite points are dropped.  Long series are thinned to ``max_points``
    by min/max pairs per bucket so peaks survive.
    """
    pts = []
    for label, x, y in series:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        x, y = _thin(x[ok], y[ok], max_points)
        pts.append((label, x, y))
    allx = np.concatenate([p[1] for p in pts]) if pts else np.empty(0)
    ally = np.concatenate([p[2] for p in pts]) if pts else np.empty(0)
    if allx.size == 0:
        allx, ally = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        pad = abs(y0) * 0.05 or 0.5
        y0, y1 = y0 - pad, y1 + pad
    L, R, T, B = _MARGIN["left"], WIDTH - _MARGIN["right"], _MARGIN["top"], HEIGHT - _MARGIN["bottom"]

    def sx(v):
        return L + (v - x0) / (x1 - x0) * (R - L)

    def sy(v):
        return B - (v - y0) / (y1 - y0) * (B - T)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{L}" y="{T}" width="{R - L}" height="{B - T}" fill="none" stroke="black"/>',
    ]
    for v in _ticks(x0, x1):
        X = _num(sx(v))
        out.append(f'<line x1="{X}" y1="{B}" x2="{X}" y2="{B + 5}" stroke="black"/>')
        out.append(f'<text x="{X}" y="{B + 18}" text-anchor="middle">{"%.4g" % v}</text>')
    for v in _ticks(y0, y1):
        Y = _num(sy(v))
        out.append(f'<line x1="{L - 5}" y1="{Y}" x2="{L}" y2="{Y}" stroke="black"/>')
        out.append(f'<text x="{L - 8}" y="{Y}" text-anchor="end" dominant-baseline="middle">{"%.4g" % v}</text>')
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{(L + R) / 2:.1f}" y="{HEIGHT - 16}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(
            f'<text x="18" y="{(T + B) / 2:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 18 {(T + B) / 2:.1f})">{escape(ylabel)}</text>'
        )
    for j, (label, x, y) in enumerate(pts):
        color = _COLORS[j % len(_COLORS)]
        coords = " ".join(f"{_num(sx(a))},{_num(sy(b))}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        if markers:
            for a, b in zip(x, y):
                out.append(f'<circle cx="{_num(sx(a))}" cy="{_num(sy(b))}" r="3" fill="{color}"/>')
        ly = T + 16 + 16 * j
        out.append(f'<line x1="{R - 110}" y1="{ly}" x2="{R - 90}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{R - 85}" y="{ly}" dominant-baseline="middle">{escape(label)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path


def _thin(x: np.ndarray, y: np.ndarray, max_points: int) -> tuple[np.ndarray, np.ndarray]:
    if len(x) <= max_points:
        return x, y
    buckets = np.array_split(np.arange(len(x)), max_points // 2)
    keep = []
    for b in buckets:
        lo, hi = b[np.argmin(y[b])], b[np.argmax(y[b])]
        keep.extend(sorted({int(lo), int(hi)}))
    keep = np.array(keep)
    return x[keep], y[keep]
