"""Canonical in-memory model for multivariate telemetry tracks.

A track is a timestamp-sorted multivariate series keyed by a
(station, spacecraft) pair. Timestamps are integer epoch microseconds so
equality tests are exact; source tables that carry fractional serial day
numbers are converted at ingest (day 0 = 1899-12-30T00:00:00Z, the common
spreadsheet serial-date origin). Missing values are NaN, which is
distinguishable from 0.0 and from every real reading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

US_PER_DAY = 86_400_000_000

# Serial day 0 in epoch microseconds (1899-12-30T00:00:00Z relative to the
# Unix epoch); day 45658 lands on 2025-01-01.
_DAY0_UNIX_US = -2_209_161_600_000_000


class CoreError(Exception):
    pass


def day_to_us(day: float) -> int:
    """Convert a fractional serial day number to integer epoch microseconds."""
    return round(day * US_PER_DAY) + _DAY0_UNIX_US


@dataclass(frozen=True, order=True)
class TrackKey:
    """Station (DSS) and spacecraft (SCID) pair identifying one track."""

    dss: int
    scid: int

    def __post_init__(self) -> None:
        if self.dss < 0 or self.scid < 0:
            raise ValueError(f"track key must be non-negative, got {self}")


class Provenance(str, Enum):
    ANTENNA = "antenna-dataset"
    JPL = "jpl-transmitter"
    CEC = "cec-transmitter"
    SYNTHETIC = "synthetic"


class ImputeKind(str, Enum):
    FORWARD_FILL = "forward-fill-then-drop-leading"
    DROP_ROWS = "drop-rows-with-missing"
    ZERO_FILL = "zero-fill"


@dataclass(frozen=True)
class ImputePolicy:
    kind: ImputeKind = ImputeKind.FORWARD_FILL


class TrackFrame:
    """Immutable multivariate series for one track key.

    Columns are float64 arrays all equal in length to ``timestamps``;
    NaN marks a missing reading. Equal timestamps are legal (interleaved
    source rows merge at identical instants) and keep arrival order.
    """

    def __init__(
        self,
        key: TrackKey,
        timestamps: Sequence[int] | np.ndarray,
        columns: Mapping[str, Sequence[float] | np.ndarray],
        provenance: Provenance = Provenance.ANTENNA,
    ) -> None:
        ts = np.asarray(timestamps, dtype=np.int64)
        if ts.ndim != 1:
            raise CoreError("timestamps must be one-dimensional")
        if ts.size > 1 and np.any(np.diff(ts) < 0):
            raise CoreError("timestamps must be non-decreasing")
        cols: dict[str, np.ndarray] = {}
        for name, values in columns.items():
            arr = np.asarray(values, dtype=np.float64)
            if arr.shape != ts.shape:
                raise CoreError(
                    f"column {name!r} has length {arr.size}, expected {ts.size}"
                )
            if name in cols:
                raise CoreError(f"duplicate column {name!r}")
            arr.flags.writeable = False
            cols[name] = arr
        ts.flags.writeable = False
        self.key = key
        self.timestamps = ts
        self.columns = cols
        self.provenance = provenance

    @property
    def n_rows(self) -> int:
        return int(self.timestamps.size)

    @property
    def feature_names(self) -> list[str]:
        return list(self.columns)

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    def values(self, names: Sequence[str] | None = None) -> np.ndarray:
        """Stack the named columns (default: all) into an [n, k] matrix."""
        names = self.feature_names if names is None else list(names)
        if not names:
            return np.empty((self.n_rows, 0), dtype=np.float64)
        return np.column_stack([self.columns[n] for n in names])

    def take(self, rows: np.ndarray | Sequence[int]) -> "TrackFrame":
        idx = np.asarray(rows, dtype=np.intp)
        return TrackFrame(
            self.key,
            self.timestamps[idx],
            {n: c[idx] for n, c in self.columns.items()},
            self.provenance,
        )

    def with_columns(self, columns: Mapping[str, np.ndarray]) -> "TrackFrame":
        return TrackFrame(self.key, self.timestamps, columns, self.provenance)

    def row_index_of(self, timestamp_us: int) -> int:
        """First row at the given instant; raises KeyError when absent."""
        i = int(np.searchsorted(self.timestamps, timestamp_us, side="left"))
        if i >= self.n_rows or self.timestamps[i] != timestamp_us:
            raise KeyError(timestamp_us)
        return i

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TrackFrame):
            return NotImplemented
        if self.key != other.key or self.provenance != other.provenance:
            return False
        if self.feature_names != other.feature_names:
            return False
        if not np.array_equal(self.timestamps, other.timestamps):
            return False
        return all(
            np.array_equal(self.columns[n], other.columns[n], equal_nan=True)
            for n in self.columns
        )

    def __repr__(self) -> str:
        return (
            f"TrackFrame(key={self.key}, rows={self.n_rows}, "
            f"features={self.feature_names}, provenance={self.provenance.value})"
        )


def empty_frame(key: TrackKey, provenance: Provenance = Provenance.ANTENNA) -> TrackFrame:
    return TrackFrame(key, np.empty(0, dtype=np.int64), {}, provenance)


@dataclass(frozen=True)
class Record:
    """One ingested row before grouping into frames.

    ``seq`` is the source sequence number (file line, spreadsheet index);
    it breaks ties between rows sharing a timestamp so grouping does not
    depend on the order records happen to arrive in.
    """

    timestamp_us: int
    key: TrackKey
    values: Mapping[str, float]
    seq: int | None = None


def build_track_frame(
    records: Iterable[Record],
    provenance: Provenance = Provenance.ANTENNA,
) -> dict[TrackKey, TrackFrame]:
    """Group records by key into time-sorted frames.

    Absent features become NaN; column order is first-seen order per key.
    Records without an explicit ``seq`` get their input position.
    """
    grouped: dict[TrackKey, list[tuple[int, int, Mapping[str, float]]]] = {}
    col_order: dict[TrackKey, dict[str, None]] = {}
    for pos, rec in enumerate(records):
        seq = pos if rec.seq is None else rec.seq
        grouped.setdefault(rec.key, []).append((rec.timestamp_us, seq, rec.values))
        order = col_order.setdefault(rec.key, {})
        for name in rec.values:
            order.setdefault(name)

    frames: dict[TrackKey, TrackFrame] = {}
    for key in sorted(grouped):
        rows = sorted(grouped[key], key=lambda r: (r[0], r[1]))
        names = list(col_order[key])
        ts = np.array([r[0] for r in rows], dtype=np.int64)
        cols = {
            name: np.array(
                [r[2].get(name, math.nan) for r in rows], dtype=np.float64
            )
            for name in names
        }
        frames[key] = TrackFrame(key, ts, cols, provenance)
    return frames


def select_track(frames: Mapping[TrackKey, TrackFrame], key: TrackKey) -> TrackFrame:
    """Frame for the key, or an empty frame when the key is absent."""
    found = frames.get(key)
    return found if found is not None else empty_frame(key)


def impute_missing(frame: TrackFrame, policy: ImputePolicy) -> TrackFrame:
    """Remove all missing markers from the frame per the policy."""
    if frame.n_rows == 0 or not frame.columns:
        return frame
    if policy.kind is ImputeKind.ZERO_FILL:
        return frame.with_columns(
            {n: np.nan_to_num(c, nan=0.0) for n, c in frame.columns.items()}
        )
    if policy.kind is ImputeKind.DROP_ROWS:
        keep = ~np.any(np.isnan(frame.values()), axis=1)
        return frame.take(np.flatnonzero(keep))
    # Forward-fill each column from its last seen value, then drop the
    # leading rows where some column has no value yet.
    filled: dict[str, np.ndarray] = {}
    first_valid = 0
    for name, col in frame.columns.items():
        valid = ~np.isnan(col)
        if not valid.any():
            return empty_frame(frame.key, frame.provenance)
        # index of the most recent valid row at or before each position
        last = np.maximum.accumulate(np.where(valid, np.arange(col.size), -1))
        first = int(np.argmax(valid))
        first_valid = max(first_valid, first)
        filled[name] = col[np.maximum(last, 0)]
    kept = np.arange(first_valid, frame.n_rows)
    return TrackFrame(
        frame.key,
        frame.timestamps[kept],
        {n: c[kept] for n, c in filled.items()},
        frame.provenance,
    )


# --- canonical CSV serialization ------------------------------------------
#
# Header: timestamp_us,dss,scid,<features...>; missing values are empty
# fields; floats use Python repr (shortest round-trip form) so
# read(write(frames)) is bit-exact.


def _format_value(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def write_frames_csv(frames: Iterable[TrackFrame]) -> str:
    """Serialize frames (sorted by key) sharing one feature schema."""
    frames = sorted(frames, key=lambda f: f.key)
    if not frames:
        return "timestamp_us,dss,scid\n"
    names = frames[0].feature_names
    for f in frames:
        if f.feature_names != names:
            raise CoreError(
                f"frame {f.key} feature schema {f.feature_names} != {names}"
            )
    lines = [",".join(["timestamp_us", "dss", "scid", *names])]
    for f in frames:
        cols = [f.columns[n] for n in names]
        for i in range(f.n_rows):
            fields = [str(int(f.timestamps[i])), str(f.key.dss), str(f.key.scid)]
            fields += [_format_value(c[i]) for c in cols]
            lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def read_frames_csv(
    text: str, provenance: Provenance = Provenance.ANTENNA
) -> dict[TrackKey, TrackFrame]:
    """Parse the canonical CSV back into frames, bit-exact."""
    lines = text.splitlines()
    if not lines:
        raise CoreError("empty canonical CSV")
    header = lines[0].split(",")
    if header[:3] != ["timestamp_us", "dss", "scid"]:
        raise CoreError(f"bad canonical CSV header: {lines[0]!r}")
    names = header[3:]
    records = []
    for seq, line in enumerate(lines[1:]):
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != len(header):
            raise CoreError(f"row {seq + 2} has {len(fields)} fields, expected {len(header)}")
        key = TrackKey(dss=int(fields[1]), scid=int(fields[2]))
        values = {
            name: (math.nan if raw == "" else float(raw))
            for name, raw in zip(names, fields[3:])
        }
        records.append(Record(int(fields[0]), key, values, seq=seq))
    # Every record carries the full header schema, so first-seen column
    # order inside build_track_frame is exactly the header order.
    return build_track_frame(records, provenance)
