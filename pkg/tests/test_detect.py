"""Thresholding and anomaly-event construction."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackwatch.core import TrackFrame, TrackKey
from trackwatch.detect import (
    AnomalyEvent,
    DetectError,
    EmptySeriesError,
    EventStatus,
    MeanKSigma,
    Percentile,
    TimestampOutOfRangeError,
    attach_context,
    compute_threshold,
    event_id,
    flag_anomalies,
)
from trackwatch.preprocess import WindowSpec, make_windows


def _frame_and_batch(values, length=1):
    frame = TrackFrame(
        TrackKey(34, 21),
        np.arange(len(values), dtype=np.int64) * 1000,
        {"SSNR": values},
    )
    return frame, make_windows(frame, WindowSpec(length=length))


class TestComputeThreshold:
    def test_constant_series_zero_variance(self):
        assert compute_threshold([2.0, 2.0, 2.0], MeanKSigma(3.0)) == 2.0

    def test_hundred_zeros_one_spike(self):
        # mean = 100/101, population std = sqrt(10000/101 - (100/101)^2),
        # threshold = 0.990099 + 3 * 9.900990 = 30.693069, by hand
        errors = np.concatenate([np.zeros(100), [100.0]])
        got = compute_threshold(errors, MeanKSigma(3.0))
        assert got == pytest.approx(30.6930693069, abs=1e-6)

    def test_percentile_nearest_rank(self):
        errors = np.arange(1.0, 101.0)
        assert compute_threshold(errors, Percentile(95.0)) == 95.0

    def test_empty_series(self):
        with pytest.raises(EmptySeriesError):
            compute_threshold([], MeanKSigma(3.0))

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            MeanKSigma(0.0)
        with pytest.raises(ValueError):
            Percentile(100.0)


class TestFlagAnomalies:
    def test_single_exceeding_window(self):
        frame, batch = _frame_and_batch([0.0, 0.0, 5.0])
        events = flag_anomalies([0.0, 0.0, 5.0], 1.0, batch, frame)
        assert len(events) == 1
        assert events[0].window_index == 2
        assert events[0].status is EventStatus.PENDING
        assert events[0].error == 5.0

    def test_all_below_threshold(self):
        frame, batch = _frame_and_batch([0.0, 0.0, 0.0])
        assert flag_anomalies([0.0, 0.0, 0.0], 1.0, batch, frame) == []

    def test_strict_comparison_on_zero_variance(self):
        frame, batch = _frame_and_batch([2.0, 2.0, 2.0])
        threshold = compute_threshold([2.0, 2.0, 2.0], MeanKSigma(3.0))
        assert flag_anomalies([2.0, 2.0, 2.0], threshold, batch, frame) == []

    def test_lowering_threshold_monotone(self):
        errors = np.concatenate([np.zeros(100), [100.0]])
        frame, batch = _frame_and_batch(list(errors))
        thr_hi = compute_threshold(errors, MeanKSigma(3.0))
        assert len(flag_anomalies(errors, thr_hi, batch, frame)) == 1
        assert len(flag_anomalies(errors, 0.5, batch, frame)) == 1  # zeros stay below
        assert len(flag_anomalies(errors, -1.0, batch, frame)) == 101

    def test_timestamp_is_last_window_row(self):
        frame, batch = _frame_and_batch([0.0, 0.0, 0.0, 9.0], length=2)
        events = flag_anomalies([0.0, 0.0, 9.0], 1.0, batch, frame)
        # window 2 covers rows 2..3; last row timestamp is 3000
        assert events[0].timestamp_us == 3000

    def test_deterministic_ids(self):
        frame, batch = _frame_and_batch([0.0, 5.0])
        a = flag_anomalies([0.0, 5.0], 1.0, batch, frame)[0]
        b = flag_anomalies([0.0, 5.0], 1.0, batch, frame)[0]
        assert a.id == b.id
        assert a.id == event_id(TrackKey(34, 21), a.timestamp_us, "LstmRecon")

    def test_every_event_error_exceeds_threshold(self):
        rng = np.random.default_rng(0)
        errors = rng.exponential(size=200)
        frame, batch = _frame_and_batch(list(errors))
        threshold = compute_threshold(errors, MeanKSigma(1.0))
        for event in flag_anomalies(errors, threshold, batch, frame):
            assert event.error > event.threshold

    @given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=80))
    @settings(max_examples=60, deadline=None)
    def test_flagged_count_non_increasing_in_threshold(self, errors):
        frame, batch = _frame_and_batch(errors)
        counts = []
        for k in (1.0, 2.0, 3.0, 4.0):
            thr = compute_threshold(np.asarray(errors), MeanKSigma(k))
            counts.append(len(flag_anomalies(errors, thr, batch, frame)))
        assert all(a >= b for a, b in zip(counts, counts[1:]))


class TestAttachContext:
    def test_humidity_from_monitor_fixture(self, mia_snt_frame):
        ts = int(mia_snt_frame.timestamps[0])
        event = AnomalyEvent(
            id="x",
            key=mia_snt_frame.key,
            timestamp_us=ts,
            window_index=0,
            error=2.0,
            threshold=1.0,
            model_kind="LstmRecon",
        )
        attach_context(event, mia_snt_frame)
        assert event.context.humidity == 26.3

    def test_frame_without_weather_columns(self):
        frame, _ = _frame_and_batch([1.0, 2.0])
        event = AnomalyEvent("x", frame.key, 0, 0, 2.0, 1.0, "LstmRecon")
        attach_context(event, frame)
        assert event.context.humidity is None
        assert event.context.wind is None

    def test_timestamp_before_frame(self):
        frame, _ = _frame_and_batch([1.0, 2.0])
        event = AnomalyEvent("x", frame.key, -5, 0, 2.0, 1.0, "LstmRecon")
        with pytest.raises(TimestampOutOfRangeError):
            attach_context(event, frame)


class TestEventLifecycle:
    def _event(self):
        return AnomalyEvent("e", TrackKey(1, 1), 0, 0, 2.0, 1.0, "LstmRecon")

    def test_pending_transitions(self):
        for status in (EventStatus.CONFIRMED, EventStatus.REJECTED, EventStatus.INFO_REQUESTED):
            event = self._event()
            event.transition(status)
            assert event.status is status

    def test_info_requested_resolves(self):
        event = self._event()
        event.transition(EventStatus.INFO_REQUESTED)
        event.transition(EventStatus.CONFIRMED)
        assert event.status is EventStatus.CONFIRMED

    def test_resolved_is_terminal(self):
        event = self._event()
        event.transition(EventStatus.CONFIRMED)
        with pytest.raises(DetectError):
            event.transition(EventStatus.REJECTED)

    def test_json_round_trip(self):
        event = self._event()
        event.severity = "High"
        back = AnomalyEvent.from_dict(event.to_dict())
        assert back.to_dict() == event.to_dict()
