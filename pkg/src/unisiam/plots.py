"""Tiny dependency-free SVG line charts for CLI reports."""

from __future__ import annotations

import os

import numpy as np

from .errors import ContractViolationError
from .ioutil import atomic_write_text

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** np.floor(np.log10(raw))
    for mult in (1, 2, 5, 10):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = np.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * abs(hi):
        ticks.append(float(t))
        t += step
    return ticks


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1000 or abs(v) < 0.01:
        return f"{v:.2e}"
    return f"{v:.4g}"


def line_chart(series: list[tuple[str, np.ndarray, np.ndarray]],
               title: str, xlabel: str, ylabel: str,
               width: int = 640, height: int = 420) -> str:
    """Render labelled (x, y) series as a standalone SVG string."""
    if not series:
        raise ContractViolationError("line_chart needs at least one series")
    for label, x, y in series:
        if np.asarray(x).shape != np.asarray(y).shape:
            raise ContractViolationError(
                f"series {label!r} has mismatched x/y lengths")
    xs_all = np.concatenate([np.asarray(x, dtype=np.float64) for _, x, _ in series])
    ys_all = np.concatenate([np.asarray(y, dtype=np.float64) for _, _, y in series])
    if xs_all.size == 0 or not (np.isfinite(xs_all).all() and np.isfinite(ys_all).all()):
        raise ContractViolationError("series must be non-empty and finite")
    x0, x1 = float(xs_all.min()), float(xs_all.max())
    y0, y1 = float(ys_all.min()), float(ys_all.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    ml, mr, mt, mb = 64, 16, 36, 48
    pw, ph = width - ml - mr, height - mt - mb

    def px(x: float) -> float:
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y: float) -> float:
        return mt + (y1 - y) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
        f'font-size="14">{title}</text>',
    ]
    for t in _ticks(x0, x1):
        if not (x0 <= t <= x1):
            continue
        parts.append(f'<line x1="{px(t):.1f}" y1="{mt + ph}" x2="{px(t):.1f}" '
                     f'y2="{mt + ph + 4}" stroke="black"/>')
        parts.append(f'<text x="{px(t):.1f}" y="{mt + ph + 18}" '
                     f'text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(y0, y1):
        if not (y0 <= t <= y1):
            continue
        parts.append(f'<line x1="{ml - 4}" y1="{py(t):.1f}" x2="{ml}" '
                     f'y2="{py(t):.1f}" stroke="black"/>')
        parts.append(f'<line x1="{ml}" y1="{py(t):.1f}" x2="{ml + pw}" '
                     f'y2="{py(t):.1f}" stroke="#dddddd"/>')
        parts.append(f'<text x="{ml - 8}" y="{py(t) + 4:.1f}" '
                     f'text-anchor="end">{_fmt(t)}</text>')
    parts.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" '
                 f'fill="none" stroke="black"/>')
    parts.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" '
                 f'text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{ylabel}</text>')
    for i, (label, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(float(x)):.2f},{py(float(y)):.2f}"
                       for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        ly = mt + 14 + 16 * i
        parts.append(f'<line x1="{ml + pw - 130}" y1="{ly - 4}" x2="{ml + pw - 110}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{ml + pw - 104}" y="{ly}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def write_svg(svg: str, path: str | os.PathLike) -> None:
    atomic_write_text(path, svg)
