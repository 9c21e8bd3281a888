"""Synthetic telemetry tracks with plantable channel-glitch anomalies.

Stands in for data that cannot ship: smooth phase-shifted carrier-quality
channels with sensor noise, plus single-sample glitches that hit the
channels in opposite directions (breaking their correlation the way a
real receiver fault does).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Provenance, TrackFrame, TrackKey


@dataclass(frozen=True)
class PlantedAnomalies:
    rows: tuple[int, ...]
    magnitudes: tuple[float, ...]


def make_sine_track(
    n: int,
    noise_sigma: float = 0.05,
    seed: int = 0,
    key: TrackKey = TrackKey(34, 21),
    n_features: int = 2,
    period: float = 50.0,
    cadence_us: int = 2_000_000,
    feature_names: tuple[str, ...] | None = None,
) -> TrackFrame:
    """Phase-shifted noisy sines, one per feature, on a fixed cadence."""
    rng = np.random.default_rng(seed)
    ts = np.arange(n, dtype=np.int64) * cadence_us
    names = feature_names or tuple(f"f{j}" for j in range(n_features))
    cols = {}
    for j, name in enumerate(names):
        phase = j * np.pi / 4
        base = np.sin(2 * np.pi * np.arange(n) / period + phase)
        cols[name] = base + rng.normal(0.0, noise_sigma, size=n)
    return TrackFrame(key, ts, cols, Provenance.SYNTHETIC)


def plant_channel_glitches(
    frame: TrackFrame,
    n_glitches: int,
    noise_sigma: float,
    seed: int = 0,
    region: tuple[int, int] | None = None,
    magnitude_range: tuple[float, float] = (10.0, 14.0),
    min_spacing: int = 10,
) -> tuple[TrackFrame, PlantedAnomalies]:
    """Add opposite-sign single-row spikes across the feature pair.

    Magnitudes are drawn in multiples of the base noise sigma from
    ``magnitude_range`` (well above the 6-sigma visibility floor). The
    first feature spikes up, the others down.
    """
    rng = np.random.default_rng([seed, 99])
    lo, hi = region if region is not None else (0, frame.n_rows)
    candidates = np.arange(lo, hi)
    rows = np.sort(rng.choice(candidates, size=n_glitches, replace=False))
    while n_glitches > 1 and np.min(np.diff(rows)) < min_spacing:
        rows = np.sort(rng.choice(candidates, size=n_glitches, replace=False))
    magnitudes = rng.uniform(
        magnitude_range[0] * noise_sigma, magnitude_range[1] * noise_sigma, size=n_glitches
    )
    cols = {name: col.copy() for name, col in frame.columns.items()}
    names = list(cols)
    for row, magnitude in zip(rows, magnitudes):
        for j, name in enumerate(names):
            cols[name][row] += magnitude if j == 0 else -magnitude
    return (
        frame.with_columns(cols),
        PlantedAnomalies(rows=tuple(int(r) for r in rows), magnitudes=tuple(magnitudes)),
    )
