"""Track frame construction, selection, imputation, and canonical CSV."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackwatch.core import (
    CoreError,
    ImputeKind,
    ImputePolicy,
    Provenance,
    Record,
    TrackFrame,
    TrackKey,
    build_track_frame,
    empty_frame,
    impute_missing,
    read_frames_csv,
    select_track,
    write_frames_csv,
)

from .conftest import mia_snt_records


class TestTrackKey:
    def test_equality_is_fieldwise(self):
        assert TrackKey(34, 21) == TrackKey(34, 21)
        assert TrackKey(34, 21) != TrackKey(14, 21)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            TrackKey(-1, 21)


class TestBuildTrackFrame:
    def test_merged_preview_rows(self, mia_snt_frame):
        # ten interleaved rows, one key, missing markers where the source
        # row carried no reading
        assert mia_snt_frame.key == TrackKey(34, 21)
        assert mia_snt_frame.n_rows == 10
        assert mia_snt_frame.column("AGC")[0] == -93.342
        assert mia_snt_frame.column("WX_HUMID")[0] == 26.3
        assert math.isnan(mia_snt_frame.column("DL_FREQ")[0])
        assert mia_snt_frame.column("DL_FREQ")[1] == 2.244562e9

    def test_empty_input(self):
        assert build_track_frame([]) == {}

    def test_two_keys_sorted_internally(self):
        records = [
            Record(300, TrackKey(14, 49), {"a": 3.0}, seq=0),
            Record(100, TrackKey(34, 21), {"a": 1.0}, seq=1),
            Record(100, TrackKey(14, 49), {"a": 1.0}, seq=2),
            Record(200, TrackKey(34, 21), {"a": 2.0}, seq=3),
        ]
        frames = build_track_frame(records)
        assert set(frames) == {TrackKey(34, 21), TrackKey(14, 49)}
        for frame in frames.values():
            assert list(frame.timestamps) == sorted(frame.timestamps)

    def test_duplicate_timestamps_keep_arrival_order(self, mia_snt_frame):
        # rows 1 and 2 share an instant; source sequence (26 before 27)
        # decides the order
        ts = mia_snt_frame.timestamps
        assert ts[1] == ts[2]
        assert math.isnan(mia_snt_frame.column("AGC")[1])
        assert mia_snt_frame.column("AGC")[2] == -93.294

    def test_column_order_is_first_seen(self):
        records = [
            Record(1, TrackKey(1, 1), {"b": 1.0}, seq=0),
            Record(2, TrackKey(1, 1), {"a": 2.0, "b": 2.0}, seq=1),
        ]
        frame = build_track_frame(records)[TrackKey(1, 1)]
        assert frame.feature_names == ["b", "a"]

    @given(st.permutations(range(10)))
    @settings(max_examples=25, deadline=None)
    def test_permutation_invariant(self, order):
        base = mia_snt_records()
        shuffled = [base[i] for i in order]
        assert build_track_frame(shuffled) == build_track_frame(base)

    def test_select_contains_exactly_key_records(self):
        records = [
            Record(10 * i, TrackKey(34, 21) if i % 2 else TrackKey(14, 49), {"x": float(i)}, seq=i)
            for i in range(8)
        ]
        frames = build_track_frame(records)
        got = select_track(frames, TrackKey(34, 21))
        assert list(got.column("x")) == [1.0, 3.0, 5.0, 7.0]


class TestSelectTrack:
    def test_present_key(self, mia_snt_frames):
        assert select_track(mia_snt_frames, TrackKey(34, 21)).n_rows == 10

    def test_absent_key_gives_empty_frame(self, mia_snt_frames):
        frame = select_track(mia_snt_frames, TrackKey(99, 99))
        assert frame.n_rows == 0
        assert frame.key == TrackKey(99, 99)

    def test_empty_map(self):
        assert select_track({}, TrackKey(1, 2)).n_rows == 0


class TestImputeMissing:
    def _frame(self, values):
        return TrackFrame(
            TrackKey(1, 1),
            np.arange(len(values), dtype=np.int64),
            {"x": values},
        )

    def test_forward_fill_drops_leading(self):
        frame = self._frame([math.nan, 5.0, math.nan])
        out = impute_missing(frame, ImputePolicy(ImputeKind.FORWARD_FILL))
        assert list(out.column("x")) == [5.0, 5.0]
        assert list(out.timestamps) == [1, 2]

    def test_fully_present_unchanged(self):
        frame = self._frame([1.0, 2.0, 3.0])
        out = impute_missing(frame, ImputePolicy(ImputeKind.FORWARD_FILL))
        assert out == frame

    def test_all_missing_drop_rows_gives_empty(self):
        frame = self._frame([math.nan, math.nan])
        out = impute_missing(frame, ImputePolicy(ImputeKind.DROP_ROWS))
        assert out.n_rows == 0

    def test_zero_fill(self):
        frame = self._frame([math.nan, 7.0])
        out = impute_missing(frame, ImputePolicy(ImputeKind.ZERO_FILL))
        assert list(out.column("x")) == [0.0, 7.0]

    @given(
        st.lists(
            st.one_of(st.none(), st.floats(-1e6, 1e6, allow_nan=False)),
            max_size=30,
        ),
        st.sampled_from(list(ImputeKind)),
    )
    @settings(max_examples=60, deadline=None)
    def test_no_missing_markers_remain(self, raw, kind):
        values = [math.nan if v is None else v for v in raw]
        frame = self._frame(values)
        out = impute_missing(frame, ImputePolicy(kind))
        for col in out.columns.values():
            assert not np.isnan(col).any()


class TestCanonicalCsv:
    def test_round_trip_bit_exact(self, mia_snt_frames):
        text = write_frames_csv(mia_snt_frames.values())
        back = read_frames_csv(text)
        assert back == mia_snt_frames
        # serialize(parse(text)) reproduces the canonical bytes
        assert write_frames_csv(back.values()) == text

    def test_missing_serialized_as_empty_field(self, mia_snt_frame):
        text = write_frames_csv([mia_snt_frame])
        first_data_row = text.splitlines()[1]
        assert ",," in first_data_row

    def test_header_shape(self):
        frame = empty_frame(TrackKey(1, 2))
        assert write_frames_csv([frame]).startswith("timestamp_us,dss,scid")

    def test_mixed_schema_rejected(self):
        a = TrackFrame(TrackKey(1, 1), [0], {"x": [1.0]})
        b = TrackFrame(TrackKey(1, 2), [0], {"y": [1.0]})
        with pytest.raises(CoreError):
            write_frames_csv([a, b])

    @given(
        st.lists(
            st.one_of(st.none(), st.floats(allow_nan=False, allow_infinity=False)),
            min_size=1,
            max_size=20,
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_float_bits_survive(self, raw):
        values = [math.nan if v is None else v for v in raw]
        frame = TrackFrame(
            TrackKey(63, 0),
            np.arange(len(values), dtype=np.int64),
            {"forward_power": values},
            Provenance.JPL,
        )
        back = read_frames_csv(write_frames_csv([frame]), Provenance.JPL)
        assert back[TrackKey(63, 0)] == frame


class TestFrameInvariants:
    def test_column_length_mismatch_rejected(self):
        with pytest.raises(CoreError):
            TrackFrame(TrackKey(1, 1), [1, 2], {"x": [1.0]})

    def test_decreasing_timestamps_rejected(self):
        with pytest.raises(CoreError):
            TrackFrame(TrackKey(1, 1), [2, 1], {"x": [1.0, 2.0]})
