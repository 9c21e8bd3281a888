"""Service-side state: runs, anomaly queue, the learning verifier, and the
event log that makes all of it replayable.

Every mutation appends an event and then folds that same event into the
live state through ``apply_event``, so live state and ``replay_log`` can
never diverge.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..agent import WorkflowConfig, WorkflowState, build_workflow, run as run_graph
from ..detect import AnomalyEvent, EventStatus
from ..ids import make_run_id
from ..preprocess import WindowSpec
from ..verify import (
    FeedbackSignal,
    FeedbackVerdict,
    QHyper,
    QTable,
    SeverityState,
    VerifierAction,
    apply_feedback,
    choose_action,
    resolve_status,
)
from .eventlog import CorruptLogError, EventLog, Event

logger = logging.getLogger(__name__)


class StoreError(Exception):
    pass


class BadDatasetError(StoreError):
    pass


class UnknownRunError(StoreError):
    pass


class UnknownEventError(StoreError):
    pass


class AlreadyResolvedError(StoreError):
    pass


@dataclass
class RunRecord:
    run_id: str
    dataset: str
    config: dict
    status: str = "running"  # running -> completed | failed
    created_us: int = 0
    decision: str | None = None

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "dataset": self.dataset,
            "config": self.config,
            "status": self.status,
            "created_us": self.created_us,
            "decision": self.decision,
        }


@dataclass
class ServiceState:
    runs: dict[str, RunRecord] = field(default_factory=dict)
    anomalies: dict[str, AnomalyEvent] = field(default_factory=dict)
    anomaly_run: dict[str, str] = field(default_factory=dict)
    qtable: QTable = field(default_factory=QTable)
    reports: dict[str, dict] = field(default_factory=dict)
    last_seq: int = 0

    def snapshot(self) -> dict:
        """Canonical comparison form of everything the log reconstructs."""
        return {
            "runs": {rid: r.to_dict() for rid, r in sorted(self.runs.items())},
            "anomalies": {eid: e.to_dict() for eid, e in sorted(self.anomalies.items())},
            "anomaly_run": dict(sorted(self.anomaly_run.items())),
            "qtable": self.qtable.to_dict(),
            "reports": dict(sorted(self.reports.items())),
            "last_seq": self.last_seq,
        }


def apply_event(state: ServiceState, event: Event) -> ServiceState:
    """Fold one event into the state; shared by live path and replay."""
    payload = event.payload
    if event.kind == "run-started":
        state.runs[payload["run_id"]] = RunRecord(
            run_id=payload["run_id"],
            dataset=payload["dataset"],
            config=payload["config"],
            status="running",
            created_us=payload["created_us"],
        )
    elif event.kind == "anomaly-flagged":
        anomaly = AnomalyEvent.from_dict(payload["event"])
        state.anomalies[anomaly.id] = anomaly
        state.anomaly_run[anomaly.id] = payload["run_id"]
    elif event.kind == "feedback-received":
        anomaly = state.anomalies[payload["event_id"]]
        anomaly.status = EventStatus(payload["new_status"])
        # an info round re-arms the verifier's follow-up choice; a
        # resolving verdict keeps the rewarded action for the record
        anomaly.chosen_action = payload.get("next_action") or payload["action"]
    elif event.kind == "qtable-updated":
        state.qtable = QTable.from_dict(payload["qtable"])
    elif event.kind == "report-generated":
        state.reports[payload["event_id"]] = payload["report"]
    elif event.kind == "run-finished":
        record = state.runs[payload["run_id"]]
        if record.status == "running":  # forward-only transitions
            record.status = payload["status"]
            record.decision = payload.get("decision")
    else:
        raise ValueError(f"unknown event kind {event.kind!r}")
    state.last_seq = event.seq
    return state


def replay_log(path: str | Path) -> ServiceState:
    """Rebuild state from the log; a corrupt tail raises with the intact
    prefix attached."""
    from .eventlog import read_events

    state = ServiceState()
    try:
        for event in read_events(path):
            apply_event(state, event)
    except CorruptLogError as exc:
        raise CorruptLogError(exc.seq, str(exc), state=state) from None
    return state


class ServiceStore:
    """Owns the event log, the live state, and background workflow runs."""

    def __init__(self, data_dir: str | Path, qhyper: QHyper | None = None):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.data_dir / "events.log"
        self.log = EventLog(self.log_path)
        self.qhyper = qhyper or QHyper()
        self.state = replay_log(self.log_path)
        self._lock = threading.RLock()
        self._executor = ThreadPoolExecutor(max_workers=4)
        self._futures: dict[str, Future] = {}

    # -- internal ------------------------------------------------------------

    def _append(self, kind: str, payload: dict) -> Event:
        event = self.log.append(kind, payload)
        apply_event(self.state, event)
        return event

    def snapshot(self) -> dict:
        with self._lock:
            return self.state.snapshot()

    # -- runs ------------------------------------------------------------------

    def start_run(self, dataset: str, config: dict | None = None, wait: bool = False) -> str:
        """Validate, log run-started, and launch the workflow."""
        dataset_path = Path(dataset)
        if not dataset_path.exists():
            raise BadDatasetError(f"dataset {dataset} does not exist")
        overrides = dict(config or {})
        workflow_config = self._workflow_config(str(dataset_path), overrides)
        build_workflow(workflow_config)  # raises BadConfigError early
        run_id = make_run_id()
        with self._lock:
            self._append(
                "run-started",
                {
                    "run_id": run_id,
                    "dataset": str(dataset_path),
                    "config": workflow_config.to_snapshot(),
                    "created_us": int(time.time() * 1_000_000),
                },
            )
        future = self._executor.submit(self._execute_run, run_id, workflow_config)
        self._futures[run_id] = future
        if wait:
            future.result()
        return run_id

    def _workflow_config(self, dataset: str, overrides: dict) -> WorkflowConfig:
        window = overrides.pop("window", None)
        features = overrides.pop("feature_columns", None)
        if features is None:
            raise BadDatasetError("config must name feature_columns")
        kwargs = dict(
            dataset=dataset,
            feature_columns=tuple(features),
            run_root=str(self.data_dir / "runs"),
            qhyper=self.qhyper,
        )
        if window is not None:
            kwargs["window"] = WindowSpec(**window)
        allowed = {
            "model_kind", "hidden_size", "n_layers", "dropout", "n_heads",
            "train_fraction", "epochs", "lr", "batch_size", "weight_decay",
            "max_grad_norm", "iforest_contamination", "threshold_method",
            "threshold_k", "threshold_p", "score_scope", "backend_url", "seed",
        }
        unknown = set(overrides) - allowed
        if unknown:
            logger.info("ignoring unknown config fields: %s", sorted(unknown))
        kwargs.update({k: v for k, v in overrides.items() if k in allowed})
        return WorkflowConfig(**kwargs)

    def _execute_run(self, run_id: str, config: WorkflowConfig) -> None:
        try:
            graph = build_workflow(config)
            state = WorkflowState(config=config, seed=config.seed, run_id=run_id)
            # the workflow verifier starts from the operator-trained table
            with self._lock:
                state.qtable = QTable.from_dict(self.state.qtable.to_dict())
            final = run_graph(graph, state)
            with self._lock:
                for anomaly in final.anomalies:
                    self._append(
                        "anomaly-flagged", {"run_id": run_id, "event": anomaly.to_dict()}
                    )
                reports_dir = final.run_dir / "reports"
                if reports_dir.is_dir():
                    for report_path in sorted(reports_dir.glob("*.json")):
                        report = json.loads(report_path.read_text())
                        rendered = report_path.with_suffix(".md")
                        if rendered.exists():
                            report["markdown"] = rendered.read_text()
                        self._append(
                            "report-generated",
                            {"run_id": run_id, "event_id": report["event_id"], "report": report},
                        )
                self._append(
                    "run-finished",
                    {
                        "run_id": run_id,
                        "status": "failed" if final.failed else "completed",
                        "decision": final.decision,
                    },
                )
        except Exception as exc:
            logger.exception("run %s failed", run_id)
            with self._lock:
                self._append(
                    "run-finished",
                    {"run_id": run_id, "status": "failed", "decision": f"internal error: {exc}"},
                )

    def wait_for(self, run_id: str, timeout: float | None = None) -> None:
        future = self._futures.get(run_id)
        if future is not None:
            future.result(timeout=timeout)

    def get_run(self, run_id: str) -> RunRecord:
        with self._lock:
            record = self.state.runs.get(run_id)
            if record is None:
                raise UnknownRunError(run_id)
            return record

    # -- anomaly queue ---------------------------------------------------------

    def list_anomalies(self, status: str | None = None, run_id: str | None = None) -> list[dict]:
        with self._lock:
            if run_id is not None and run_id not in self.state.runs:
                raise UnknownRunError(run_id)
            rows = []
            for event_id, anomaly in self.state.anomalies.items():
                if run_id is not None and self.state.anomaly_run.get(event_id) != run_id:
                    continue
                if status == "pending":
                    if anomaly.status not in (EventStatus.PENDING, EventStatus.INFO_REQUESTED):
                        continue
                elif status is not None and anomaly.status.value != status:
                    continue
                doc = anomaly.to_dict()
                doc["run_id"] = self.state.anomaly_run.get(event_id)
                rows.append(doc)
            rows.sort(key=lambda d: (d["timestamp_us"], d["id"]))
            return rows

    def list_pending(self, run_id: str | None = None) -> list[dict]:
        return self.list_anomalies(status="pending", run_id=run_id)

    def submit_feedback(
        self,
        event_id: str,
        verdict: str,
        note: str | None = None,
        operator: str = "",
    ) -> dict:
        """Apply operator feedback: one Q-cell update plus a status move."""
        with self._lock:
            anomaly = self.state.anomalies.get(event_id)
            if anomaly is None:
                raise UnknownEventError(event_id)
            if anomaly.status not in (EventStatus.PENDING, EventStatus.INFO_REQUESTED):
                raise AlreadyResolvedError(f"{event_id} is {anomaly.status.value}")
            verdict_enum = FeedbackVerdict(verdict)
            action = VerifierAction(anomaly.chosen_action or "Confirm")
            severity = SeverityState(anomaly.severity or "Low")
            old_value = float(self.state.qtable.q[severity.index, action.index])
            signal = FeedbackSignal(verdict=verdict_enum, note=note, operator=operator)
            apply_feedback(self.state.qtable, severity, action, signal, self.qhyper)
            new_value = float(self.state.qtable.q[severity.index, action.index])
            new_status = resolve_status(action, verdict_enum)
            next_action = None
            if action is VerifierAction.REQUEST_INFO:
                # info came back: re-choose between confirm and reject with
                # the freshly updated table (greedy; exploration happened
                # when the action was first chosen)
                frozen = QTable(
                    q=self.state.qtable.q.copy(),
                    visits=self.state.qtable.visits.copy(),
                    epsilon=0.0,
                )
                follow_up = choose_action(
                    frozen,
                    severity,
                    self.qhyper,
                    np.random.default_rng(0),
                    allowed=(VerifierAction.CONFIRM, VerifierAction.REJECT),
                )
                next_action = follow_up.value
            self._append(
                "feedback-received",
                {
                    "event_id": event_id,
                    "verdict": verdict_enum.value,
                    "note": note,
                    "operator": operator,
                    "action": action.value,
                    "new_status": new_status,
                    "next_action": next_action,
                },
            )
            self._append("qtable-updated", {"qtable": self.state.qtable.to_dict()})
            return {
                "event_id": event_id,
                "new_status": new_status,
                "q_delta": {
                    "state": severity.value,
                    "action": action.value,
                    "old": old_value,
                    "new": new_value,
                    "delta": new_value - old_value,
                },
            }

    # -- reports and error series ----------------------------------------------

    def get_report(self, event_id: str) -> dict:
        with self._lock:
            report = self.state.reports.get(event_id)
            if report is None:
                raise UnknownEventError(event_id)
            return report

    def get_errors(self, run_id: str, dss: int | None = None, scid: int | None = None) -> list[dict]:
        self.get_run(run_id)  # raises UnknownRunError
        errors_path = self.data_dir / "runs" / run_id / "errors.json"
        if not errors_path.exists():
            return []
        tracks = json.loads(errors_path.read_text())
        if dss is not None:
            tracks = [t for t in tracks if t["dss"] == dss]
        if scid is not None:
            tracks = [t for t in tracks if t["scid"] == scid]
        return tracks

    def close(self) -> None:
        self._executor.shutdown(wait=True)
