"""Minimal SVG line charts for inspecting windows offline."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

WIDTH = 640
PANEL_H = 150
PAD = 40
COLORS = ("#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def _polyline(y: np.ndarray, top: float, lo: float, hi: float, color: str) -> str:
    n = y.shape[0]
    span = hi - lo if hi > lo else 1.0
    xs = PAD + (WIDTH - 2 * PAD) * np.arange(n) / max(n - 1, 1)
    ys = top + PANEL_H - 10 - (PANEL_H - 20) * (y - lo) / span
    pts = " ".join(f"{x:.2f},{v:.2f}" for x, v in zip(xs, ys))
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>'


def _panel(series, top: float, label: str, colors, shade=None) -> list[str]:
    series = [np.asarray(s, dtype=float) for s in series]
    lo = min(float(s.min()) for s in series)
    hi = max(float(s.max()) for s in series)
    parts = [
        f'<rect x="{PAD}" y="{top}" width="{WIDTH - 2 * PAD}" height="{PANEL_H}" fill="none" stroke="#999"/>',
        f'<text x="{PAD}" y="{top - 4}" font-size="11" font-family="sans-serif">{escape(label)} [{lo:.3g}, {hi:.3g}]</text>',
    ]
    if shade is not None and np.any(shade):
        n = len(shade)
        dx = (WIDTH - 2 * PAD) / max(n - 1, 1)
        for i in np.flatnonzero(shade):
            parts.append(
                f'<rect x="{PAD + (i - 0.5) * dx:.2f}" y="{top}" width="{dx:.2f}" height="{PANEL_H}" fill="#d62728" fill-opacity="0.15"/>'
            )
    for s, col in zip(series, colors):
        for j in range(s.shape[1] if s.ndim == 2 else 1):
            y = s[:, j] if s.ndim == 2 else s
            parts.append(_polyline(y, top, lo, hi, col if s.ndim == 1 or s.shape[1] == 1 else COLORS[j % len(COLORS)]))
    return parts


def window_figure(path, original, reconstruction, scores, point_labels=None, title="") -> None:
    """Three stacked panels: original (annotated anomalies shaded), reconstruction, log10 score."""
    original = np.asarray(original, dtype=float)
    reconstruction = np.asarray(reconstruction, dtype=float)
    log_scores = np.log10(np.maximum(np.asarray(scores, dtype=float), 1e-12))
    height = 3 * (PANEL_H + PAD) + PAD
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{PAD}" y="18" font-size="13" font-family="sans-serif">{escape(title)}</text>',
    ]
    top = PAD
    parts += _panel([original], top, "original", ["#1f77b4"], shade=point_labels)
    top += PANEL_H + PAD
    parts += _panel([reconstruction], top, "reconstruction", ["#2ca02c"])
    top += PANEL_H + PAD
    parts += _panel([log_scores], top, "log10 anomaly score", ["#d62728"])
    parts.append("</svg>")
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text("\n".join(parts) + "\n", encoding="utf-8")
