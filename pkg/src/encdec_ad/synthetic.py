"""Noisy sine series with injected spikes, for tests and the synthetic preset."""

from __future__ import annotations

import numpy as np

from .data import TimeSeriesFrame
from .numerics import make_rng


def sine_series(
    n_windows: int = 290,
    L: int = 30,
    n_anomalous: int = 40,
    period: float = 24.3,
    amplitude: float = 1.0,
    noise: float = 0.05,
    spike_len: int = 5,
    spike_factor: float = 3.0,
    m: int = 1,
    seed: int = 0,
    series_id: str = "synthetic",
) -> TimeSeriesFrame:
    """Concatenation of ``n_windows`` aligned blocks of length ``L``.

    ``n_anomalous`` blocks (chosen by seed) get ``spike_len`` consecutive points
    set to ``spike_factor * amplitude``; each spike lies inside one block, so
    non-overlapping windows of length ``L`` split cleanly into normal and
    anomalous ones. With ``m > 1`` each channel is a fixed random gain times the
    latent signal plus independent noise, so most variance sits on one
    principal direction.
    """
    if not 0 <= n_anomalous <= n_windows:
        raise ValueError("n_anomalous must lie in [0, n_windows]")
    if spike_len > L:
        raise ValueError("spike_len cannot exceed L")
    rng = make_rng([seed, 7])
    T = n_windows * L
    t = np.arange(T)
    latent = amplitude * np.sin(2 * np.pi * t / period)
    blocks = np.sort(rng.choice(n_windows, size=n_anomalous, replace=False))
    intervals = []
    for b in blocks:
        off = int(rng.integers(0, L - spike_len + 1))
        s = int(b * L + off)
        latent[s : s + spike_len] = spike_factor * amplitude
        intervals.append((s, s + spike_len))
    if m == 1:
        values = (latent + rng.normal(0.0, noise, T))[:, None]
    else:
        gains = rng.uniform(0.5, 1.5, m) * rng.choice([-1.0, 1.0], m)
        values = latent[:, None] * gains + rng.normal(0.0, noise, (T, m))
        # weak independent wander so the leading component is not everything
        values += 0.3 * amplitude * np.sin(2 * np.pi * t / (period * 3.1))[:, None] * rng.normal(0.0, 1.0, m)
    return TimeSeriesFrame(series_id, values, intervals=intervals)
