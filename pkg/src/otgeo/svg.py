"""Minimal hand-emitted SVG line plots (no plotting dependency, byte-stable).

All coordinates are formatted with a fixed precision so identical inputs
produce identical bytes.
"""

from __future__ import annotations

import numpy as np

_WIDTH, _HEIGHT = 640, 420
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 70, 20, 40, 50
_COLORS = ("#1f6fb2", "#c44e52", "#55a868", "#8172b2")


def _fmt(v):
    return f"{v:.6f}".rstrip("0").rstrip(".")


def _ticks(lo, hi, count=5):
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, count)


def line_plot(series, title, xlabel, ylabel, annotations=(), digest=""):
    """Render labelled polylines; ``series`` is a list of (label, x, y)."""
    xs = np.concatenate([np.asarray(x, dtype=float) for _, x, _ in series])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, _, y in series])
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    pad = 0.05 * (y_hi - y_lo) or 1.0
    y_lo, y_hi = y_lo - pad, y_hi + pad

    pw = _WIDTH - _MARGIN_L - _MARGIN_R
    ph = _HEIGHT - _MARGIN_T - _MARGIN_B

    def px(x):
        return _MARGIN_L + pw * (x - x_lo) / (x_hi - x_lo)

    def py(y):
        return _MARGIN_T + ph * (1.0 - (y - y_lo) / (y_hi - y_lo))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
           f'viewBox="0 0 {_WIDTH} {_HEIGHT}">']
    if digest:
        out.append(f"<!-- config_digest={digest} -->")
    out.append(f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>')
    out.append(f'<text x="{_WIDTH // 2}" y="24" text-anchor="middle" '
               f'font-family="sans-serif" font-size="15">{title}</text>')

    for tx in _ticks(x_lo, x_hi):
        X = _fmt(px(tx))
        out.append(f'<line x1="{X}" y1="{_MARGIN_T}" x2="{X}" y2="{_HEIGHT - _MARGIN_B}" '
                   f'stroke="#dddddd" stroke-width="1"/>')
        out.append(f'<text x="{X}" y="{_HEIGHT - _MARGIN_B + 18}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{_fmt(tx)}</text>')
    for ty in _ticks(y_lo, y_hi):
        Y = _fmt(py(ty))
        out.append(f'<line x1="{_MARGIN_L}" y1="{Y}" x2="{_WIDTH - _MARGIN_R}" y2="{Y}" '
                   f'stroke="#dddddd" stroke-width="1"/>')
        out.append(f'<text x="{_MARGIN_L - 6}" y="{Y}" text-anchor="end" dy="4" '
                   f'font-family="sans-serif" font-size="11">{_fmt(ty)}</text>')

    out.append(f'<rect x="{_MARGIN_L}" y="{_MARGIN_T}" width="{pw}" height="{ph}" '
               f'fill="none" stroke="#333333"/>')
    for i, (label, x, y) in enumerate(series):
        pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(x, y))
        color = _COLORS[i % len(_COLORS)]
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{_WIDTH - _MARGIN_R - 8}" y="{_MARGIN_T + 16 + 15 * i}" '
                   f'text-anchor="end" font-family="sans-serif" font-size="11" '
                   f'fill="{color}">{label}</text>')
    for j, note in enumerate(annotations):
        out.append(f'<text x="{_MARGIN_L + 8}" y="{_MARGIN_T + 16 + 15 * j}" '
                   f'font-family="sans-serif" font-size="11" fill="#333333">{note}</text>')
    out.append(f'<text x="{_WIDTH // 2}" y="{_HEIGHT - 12}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12">{xlabel}</text>')
    out.append(f'<text x="16" y="{_HEIGHT // 2}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12" '
               f'transform="rotate(-90 16 {_HEIGHT // 2})">{ylabel}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
