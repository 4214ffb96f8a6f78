"""Minimal SVG line chart: solid lines for observed losses, dashed for predicted."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)

WIDTH, HEIGHT = 720, 460
LEFT, RIGHT, TOP, BOTTOM = 80, 20, 40, 60


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    return np.linspace(lo, hi, n)


def loss_chart_svg(observed: np.ndarray, predicted: np.ndarray | None = None, title: str = "") -> str:
    """Render ``(K+1, Q)`` loss curves, one color per agent."""
    observed = np.asarray(observed, dtype=np.float64)
    curves = [observed] + ([np.asarray(predicted, dtype=np.float64)] if predicted is not None else [])
    K = observed.shape[0] - 1
    lo = min(float(c.min()) for c in curves)
    hi = max(float(c.max()) for c in curves)
    if hi == lo:
        hi, lo = hi + 0.5, lo - 0.5
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(k):
        return LEFT + pw * (k / K if K else 0.0)

    def sy(v):
        return TOP + ph * (1.0 - (v - lo) / (hi - lo))

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>')
    for v in _ticks(lo, hi):
        y = sy(v)
        out.append(f'<line x1="{LEFT - 5}" y1="{y:.2f}" x2="{LEFT}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 8}" y="{y + 4:.2f}" text-anchor="end" font-size="11">{v:.4g}</text>')
    for k in _ticks(0, K):
        x = sx(k)
        out.append(f'<line x1="{x:.2f}" y1="{TOP + ph}" x2="{x:.2f}" y2="{TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{TOP + ph + 18}" text-anchor="middle" font-size="11">{k:.0f}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle" font-size="13">iteration</text>')
    out.append(
        f'<text x="18" y="{TOP + ph / 2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 18 {TOP + ph / 2:.1f})">MSE loss</text>'
    )
    for i, curve in enumerate(curves):
        dash = ' stroke-dasharray="6,4"' if i == 1 else ""
        for q in range(curve.shape[1]):
            pts = " ".join(f"{sx(k):.2f},{sy(v):.2f}" for k, v in enumerate(curve[:, q]))
            color = PALETTE[q % len(PALETTE)]
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{pts}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
