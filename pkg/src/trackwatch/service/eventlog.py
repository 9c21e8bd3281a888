"""Append-only JSON-lines event log; replaying it rebuilds system state."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

EVENT_KINDS = (
    "run-started",
    "anomaly-flagged",
    "feedback-received",
    "qtable-updated",
    "report-generated",
    "run-finished",
)


class CorruptLogError(Exception):
    def __init__(self, seq: int, reason: str, state: object = None):
        super().__init__(f"corrupt event at seq {seq}: {reason}")
        self.seq = seq
        self.state = state  # state reconstructed from the intact prefix


@dataclass(frozen=True)
class Event:
    seq: int
    instant_us: int
    kind: str
    payload: dict


def read_events(path: str | Path) -> Iterator[Event]:
    """Yield events in order; raises CorruptLogError on a bad line."""
    path = Path(path)
    if not path.exists():
        return
    last_seq = 0
    with path.open() as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                event = Event(
                    seq=int(doc["seq"]),
                    instant_us=int(doc["instant_us"]),
                    kind=doc["kind"],
                    payload=doc["payload"],
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorruptLogError(last_seq + 1, str(exc))
            if event.seq <= last_seq:
                raise CorruptLogError(event.seq, "sequence numbers must increase")
            last_seq = event.seq
            yield event


class EventLog:
    """Single-writer append log. Callers serialize appends themselves."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._next_seq = 1
        if self.path.exists():
            for event in self.read():
                self._next_seq = event.seq + 1

    def append(self, kind: str, payload: dict) -> Event:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        event = Event(
            seq=self._next_seq,
            instant_us=int(time.time() * 1_000_000),
            kind=kind,
            payload=payload,
        )
        line = json.dumps(
            {"seq": event.seq, "instant_us": event.instant_us, "kind": kind, "payload": payload}
        )
        with self.path.open("a") as fh:
            fh.write(line + "\n")
        self._next_seq += 1
        return event

    def read(self) -> Iterator[Event]:
        return read_events(self.path)
