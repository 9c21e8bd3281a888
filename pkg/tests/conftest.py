"""Shared fixtures: the published telemetry preview rows and synthetic tracks."""

from __future__ import annotations

import math

import numpy as np
import pytest

from trackwatch.core import Provenance, Record, TrackKey, build_track_frame, day_to_us

NAN = math.nan

# First ten rows of the merged station/spacecraft monitor dataset preview
# (DSS 34 / SCID 21, alternating DL_FREQ and AGC readings). ``index`` is the
# source row number and doubles as the tie-breaking sequence for rows that
# share an instant.
MIA_SNT_ROWS = [
    # (index, t, time, DOY, Date, UPL_FREQ, DL_FREQ, DSS, SCID, AGC,
    #  UPL_CMD, UPL_EX, UPL_PWR, WX_HUMID)
    (23, 45658.041667, 0.041667, 1, 45658, NAN, NAN, 34, 21, -93.342, NAN, NAN, NAN, 26.3),
    (26, 45658.044444, 0.044444, 1, 45658, NAN, 2.244562e9, 34, 21, NAN, NAN, NAN, NAN, 25.4),
    (27, 45658.044444, 0.044444, 1, 45658, NAN, NAN, 34, 21, -93.294, NAN, NAN, NAN, 25.9),
    (31, 45658.047222, 0.047222, 1, 45658, NAN, NAN, 34, 21, -93.305, NAN, NAN, NAN, 24.9),
    (32, 45658.047222, 0.047222, 1, 45658, NAN, 2.244562e9, 34, 21, NAN, NAN, NAN, NAN, 24.7),
    (38, 45658.050000, 0.050000, 1, 45658, NAN, 2.244562e9, 34, 21, NAN, NAN, NAN, NAN, 24.8),
    (39, 45658.050000, 0.050000, 1, 45658, NAN, NAN, 34, 21, -93.307, NAN, NAN, NAN, 24.9),
    (48, 45658.052778, 0.052778, 1, 45658, NAN, 2.244562e9, 34, 21, NAN, NAN, NAN, NAN, 23.1),
    (49, 45658.052778, 0.052778, 1, 45658, NAN, NAN, 34, 21, -93.344, NAN, NAN, NAN, 23.2),
    (54, 45658.055556, 0.055556, 1, 45658, NAN, NAN, 34, 21, -93.331, NAN, NAN, NAN, 23.9),
]

MIA_SNT_COLUMNS = [
    "index", "t", "time", "DOY", "Date", "UPL_FREQ", "DL_FREQ",
    "DSS", "SCID", "AGC", "UPL_CMD", "UPL_EX", "UPL_PWR", "WX_HUMID",
]


def mia_snt_records() -> list[Record]:
    records = []
    for row in MIA_SNT_ROWS:
        values = dict(zip(MIA_SNT_COLUMNS, (float(v) for v in row)))
        records.append(
            Record(
                timestamp_us=day_to_us(row[1]),
                key=TrackKey(dss=int(row[7]), scid=int(row[8])),
                values=values,
                seq=int(row[0]),
            )
        )
    return records


@pytest.fixture
def mia_snt_frames():
    return build_track_frame(mia_snt_records())


@pytest.fixture
def mia_snt_frame(mia_snt_frames):
    return mia_snt_frames[TrackKey(34, 21)]


def make_sine_frame(
    n: int,
    noise_sigma: float = 0.05,
    seed: int = 0,
    key: TrackKey = TrackKey(34, 21),
    n_features: int = 2,
    period: float = 50.0,
):
    """Noisy sine track with one phase-shifted sine per feature."""
    from trackwatch.core import TrackFrame

    rng = np.random.default_rng(seed)
    ts = np.arange(n, dtype=np.int64) * 2_000_000  # two-second cadence
    cols = {}
    for j in range(n_features):
        phase = j * np.pi / 4
        base = np.sin(2 * np.pi * np.arange(n) / period + phase)
        cols[f"f{j}"] = base + rng.normal(0.0, noise_sigma, size=n)
    return TrackFrame(key, ts, cols, Provenance.SYNTHETIC)


def plant_spikes(
    frame,
    rows: list[int],
    magnitude: float,
    feature: str | None = None,
):
    """Return a copy of the frame with single-row spikes added."""
    cols = {n: c.copy() for n, c in frame.columns.items()}
    names = [feature] if feature else list(cols)
    for r in rows:
        for name in names:
            cols[name][r] += magnitude
    return frame.with_columns(cols)


def write_planted_fixture(
    path,
    n: int = 300,
    n_glitches: int = 2,
    seed: int = 7,
    noise_sigma: float = 0.05,
):
    """Canonical CSV of a synthetic track with channel glitches in the
    scored half; returns the planted row indices."""
    from trackwatch.core import write_frames_csv
    from trackwatch.synthetic import make_sine_track, plant_channel_glitches

    frame = make_sine_track(n, noise_sigma=noise_sigma, seed=seed)
    half = n // 2
    spiked, planted = plant_channel_glitches(
        frame,
        n_glitches,
        noise_sigma,
        seed=seed,
        region=(half + 20, n - 10),
        min_spacing=20,
    )
    path.write_text(write_frames_csv([spiked]))
    return planted


def small_workflow_config(dataset, run_root, **overrides):
    from trackwatch.agent import WorkflowConfig
    from trackwatch.preprocess import WindowSpec

    defaults = dict(
        dataset=str(dataset),
        feature_columns=("f0", "f1"),
        hidden_size=16,
        n_layers=1,
        window=WindowSpec(length=4, stride=2),
        epochs=60,
        batch_size=16,
        lr=2e-3,
        run_root=str(run_root),
        seed=7,
    )
    defaults.update(overrides)
    return WorkflowConfig(**defaults)
