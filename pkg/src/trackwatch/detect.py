"""Threshold reconstruction-error series into anomaly events with context."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .core import TrackFrame, TrackKey
from .preprocess import WindowBatch


class DetectError(Exception):
    pass


class EmptySeriesError(DetectError):
    pass


class TimestampOutOfRangeError(DetectError):
    pass


@dataclass(frozen=True)
class MeanKSigma:
    """mean + k * population standard deviation."""

    k: float = 3.0

    def __post_init__(self) -> None:
        if self.k <= 0:
            raise ValueError("k must be positive")


@dataclass(frozen=True)
class Percentile:
    """Nearest-rank order statistic (the ceil(p/100*n)-th value)."""

    p: float

    def __post_init__(self) -> None:
        if not 0.0 < self.p < 100.0:
            raise ValueError("p must be in (0, 100)")


ThresholdMethod = MeanKSigma | Percentile


def compute_threshold(errors: np.ndarray | Sequence[float], method: ThresholdMethod) -> float:
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise EmptySeriesError("cannot threshold an empty error series")
    if isinstance(method, MeanKSigma):
        return float(errors.mean() + method.k * errors.std())
    rank = math.ceil(method.p / 100.0 * errors.size)
    return float(np.sort(errors)[rank - 1])


class EventStatus(str, Enum):
    PENDING = "pending"
    CONFIRMED = "confirmed"
    REJECTED = "rejected"
    INFO_REQUESTED = "info-requested"


# legal lifecycle moves; everything else is rejected
_TRANSITIONS = {
    EventStatus.PENDING: {EventStatus.CONFIRMED, EventStatus.REJECTED, EventStatus.INFO_REQUESTED},
    EventStatus.INFO_REQUESTED: {EventStatus.CONFIRMED, EventStatus.REJECTED},
}


@dataclass
class EventContext:
    wind: float | None = None
    rain: float | None = None
    temperature: float | None = None
    humidity: float | None = None

    def to_dict(self) -> dict:
        return {
            "wind": self.wind,
            "rain": self.rain,
            "temperature": self.temperature,
            "humidity": self.humidity,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "EventContext":
        return cls(
            wind=doc.get("wind"),
            rain=doc.get("rain"),
            temperature=doc.get("temperature"),
            humidity=doc.get("humidity"),
        )


@dataclass
class AnomalyEvent:
    id: str
    key: TrackKey
    timestamp_us: int
    window_index: int
    error: float
    threshold: float
    model_kind: str
    feature_snapshot: dict[str, float] = field(default_factory=dict)
    context: EventContext = field(default_factory=EventContext)
    status: EventStatus = EventStatus.PENDING
    chosen_action: str | None = None
    severity: str | None = None

    def transition(self, new_status: EventStatus) -> "AnomalyEvent":
        allowed = _TRANSITIONS.get(self.status, set())
        if new_status not in allowed:
            raise DetectError(f"illegal status transition {self.status.value} -> {new_status.value}")
        self.status = new_status
        return self

    def to_dict(self) -> dict:
        # stable field order for serialized events
        return {
            "id": self.id,
            "dss": self.key.dss,
            "scid": self.key.scid,
            "timestamp_us": self.timestamp_us,
            "window_index": self.window_index,
            "error": self.error,
            "threshold": self.threshold,
            "model_kind": self.model_kind,
            "feature_snapshot": self.feature_snapshot,
            "context": self.context.to_dict(),
            "status": self.status.value,
            "chosen_action": self.chosen_action,
            "severity": self.severity,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: Mapping) -> "AnomalyEvent":
        return cls(
            id=doc["id"],
            key=TrackKey(doc["dss"], doc["scid"]),
            timestamp_us=doc["timestamp_us"],
            window_index=doc["window_index"],
            error=doc["error"],
            threshold=doc["threshold"],
            model_kind=doc["model_kind"],
            feature_snapshot=dict(doc.get("feature_snapshot", {})),
            context=EventContext.from_dict(doc.get("context", {})),
            status=EventStatus(doc.get("status", "pending")),
            chosen_action=doc.get("chosen_action"),
            severity=doc.get("severity"),
        )


def event_id(key: TrackKey, timestamp_us: int, model_kind: str) -> str:
    digest = hashlib.sha256(f"{key.dss}:{key.scid}:{timestamp_us}:{model_kind}".encode())
    return digest.hexdigest()[:16]


def flag_anomalies(
    errors: np.ndarray | Sequence[float],
    threshold: float,
    batch: WindowBatch,
    frame: TrackFrame,
    model_kind: str = "LstmRecon",
) -> list[AnomalyEvent]:
    """One pending event per error strictly above the threshold.

    Each window's error is assigned to its last row's timestamp; ids are
    deterministic hashes of (key, timestamp, model kind).
    """
    errors = np.asarray(errors, dtype=np.float64)
    if not math.isfinite(threshold):
        raise DetectError(f"threshold must be finite, got {threshold}")
    if errors.size != batch.n_windows:
        raise DetectError(f"{errors.size} errors for {batch.n_windows} windows")
    events = []
    for w in np.flatnonzero(errors > threshold):
        lo, hi = batch.index_map[w]
        row = hi - 1
        ts = int(frame.timestamps[row])
        snapshot = {
            name: float(frame.column(name)[row])
            for name in batch.feature_names
            if name in frame.columns
        }
        events.append(
            AnomalyEvent(
                id=event_id(frame.key, ts, model_kind),
                key=frame.key,
                timestamp_us=ts,
                window_index=int(w),
                error=float(errors[w]),
                threshold=float(threshold),
                model_kind=model_kind,
                feature_snapshot=snapshot,
            )
        )
    return events


DEFAULT_CONTEXT_COLUMNS = {
    "wind": "WIND",
    "rain": "RAIN",
    "temperature": "TEMP",
    "humidity": "WX_HUMID",
}


def attach_context(
    event: AnomalyEvent,
    frame: TrackFrame,
    context_columns: Mapping[str, str] | None = None,
) -> AnomalyEvent:
    """Populate weather context from the configured frame columns.

    Absent columns leave their fields unset; a timestamp outside the
    frame's span is an error.
    """
    columns = DEFAULT_CONTEXT_COLUMNS if context_columns is None else dict(context_columns)
    if frame.n_rows == 0:
        raise TimestampOutOfRangeError("empty frame")
    if not frame.timestamps[0] <= event.timestamp_us <= frame.timestamps[-1]:
        raise TimestampOutOfRangeError(
            f"{event.timestamp_us} outside [{frame.timestamps[0]}, {frame.timestamps[-1]}]"
        )
    row = int(np.searchsorted(frame.timestamps, event.timestamp_us, side="left"))
    values = {}
    for field_name, column in columns.items():
        if column in frame.columns:
            value = float(frame.column(column)[row])
            values[field_name] = None if math.isnan(value) else value
    event.context = replace(event.context, **values)
    return event
