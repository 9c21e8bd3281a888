"""HTTP API, event-log persistence, and run orchestration."""

from .api import create_app
from .eventlog import CorruptLogError, Event, EventLog
from .store import (
    AlreadyResolvedError,
    BadDatasetError,
    RunRecord,
    ServiceState,
    ServiceStore,
    UnknownEventError,
    UnknownRunError,
    apply_event,
    replay_log,
)

__all__ = [
    "AlreadyResolvedError",
    "BadDatasetError",
    "CorruptLogError",
    "Event",
    "EventLog",
    "RunRecord",
    "ServiceState",
    "ServiceStore",
    "UnknownEventError",
    "UnknownRunError",
    "apply_event",
    "create_app",
    "replay_log",
]
