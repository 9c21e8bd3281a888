"""Deterministic state-graph workflow: ingest, preprocess, score, verify,
explain, plan, human feedback, report.

Nodes are pure-ish transforms over a shared state; the only cycle is the
bounded feedback/verify loop. A node failure is logged and halts the
workflow gracefully (the state survives, the decision stays unset).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import detect, verify
from .core import (
    ImputeKind,
    ImputePolicy,
    TrackFrame,
    TrackKey,
    impute_missing,
    read_frames_csv,
)
from .detect import AnomalyEvent, EventStatus, MeanKSigma, Percentile
from .ids import make_run_id
from .ingest import ingest_mailbox
from .nn import ModelConfig, ModelKind, OptimHyper, reconstruct_errors, save_checkpoint, train
from .preprocess import (
    ForestConfig,
    WindowSpec,
    apply_minmax,
    filter_outliers,
    fit_isolation_forest,
    fit_minmax,
    iforest_scores,
    make_windows,
)
from .report import RemoteBackend, TemplateBackend, generate_report, render_report_markdown
from .verify import FeedbackSignal, FeedbackVerdict, QHyper, QTable, VerifierAction

NODE_ORDER = (
    "ingest",
    "preprocess",
    "score",
    "verify",
    "explain",
    "plan",
    "human_feedback",
    "report",
)


class BadConfigError(ValueError):
    pass


# a feedback source maps (event, state) -> verdict or None (no opinion)
FeedbackSource = Callable[[AnomalyEvent, "WorkflowState"], FeedbackVerdict | None]


def agree_all_source(event: AnomalyEvent, state: "WorkflowState") -> FeedbackVerdict:
    return FeedbackVerdict.AGREE


@dataclass
class WorkflowConfig:
    dataset: str
    feature_columns: tuple[str, ...]
    model_kind: str = "LstmRecon"
    hidden_size: int = 32
    n_layers: int = 1
    dropout: float = 0.1
    n_heads: int = 4
    window: WindowSpec = field(default_factory=lambda: WindowSpec(length=4, stride=2))
    train_fraction: float = 0.5
    epochs: int = 60
    lr: float = 2e-3
    batch_size: int = 64
    weight_decay: float = 1e-5
    max_grad_norm: float = 1.0
    impute: ImputeKind = ImputeKind.FORWARD_FILL
    iforest_contamination: float = 0.01
    threshold_method: str = "mean-k-sigma"  # or "percentile"
    threshold_k: float = 3.0
    threshold_p: float = 99.0
    score_scope: str = "full"  # or "test"
    context_columns: Mapping[str, str] = field(
        default_factory=lambda: dict(detect.DEFAULT_CONTEXT_COLUMNS)
    )
    qhyper: QHyper = field(default_factory=QHyper)
    feedback_mode: str = "none"  # none | agree-all | source
    feedback_source: FeedbackSource | None = None
    feedback_loop_max: int = 3
    backend_url: str | None = None  # None -> template backend
    run_root: str = "runs"
    seed: int = 0

    def to_snapshot(self) -> dict:
        doc = {
            "dataset": self.dataset,
            "feature_columns": list(self.feature_columns),
            "model_kind": self.model_kind,
            "hidden_size": self.hidden_size,
            "n_layers": self.n_layers,
            "dropout": self.dropout,
            "window": {
                "length": self.window.length,
                "stride": self.window.stride,
                "horizon": self.window.horizon,
            },
            "train_fraction": self.train_fraction,
            "epochs": self.epochs,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "iforest_contamination": self.iforest_contamination,
            "threshold_method": self.threshold_method,
            "threshold_k": self.threshold_k,
            "score_scope": self.score_scope,
            "feedback_mode": self.feedback_mode,
            "feedback_loop_max": self.feedback_loop_max,
            "backend_url": self.backend_url,
            "seed": self.seed,
        }
        return doc


@dataclass
class TrackWork:
    """Per-track intermediates carried between nodes."""

    full_frame: TrackFrame  # imputed, unscaled, all columns
    model_frame: TrackFrame | None = None  # filtered rows, feature columns, unscaled
    score_batch: object = None
    errors: np.ndarray | None = None
    threshold: float | None = None
    removed_rows: list[int] = field(default_factory=list)
    train_cut_row: int = 0


@dataclass
class WorkflowState:
    config: WorkflowConfig
    seed: int
    run_id: str = ""
    anomalies: list[AnomalyEvent] = field(default_factory=list)
    logs: list[str] = field(default_factory=list)
    messages: list[tuple[str, str]] = field(default_factory=list)
    decision: str | None = None
    feedback: list[FeedbackSignal] = field(default_factory=list)
    artifacts: dict[str, str] = field(default_factory=dict)
    tracks: dict[TrackKey, TrackWork] = field(default_factory=dict)
    qtable: QTable = field(default_factory=QTable)
    cursor: int = 0
    loop_count: int = 0
    failed: bool = False
    _rng: np.random.Generator | None = None

    def log(self, node: str, message: str) -> None:
        instant = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        self.logs.append(f"{instant} | {node} | {message}")

    @property
    def rng(self) -> np.random.Generator:
        if self._rng is None:
            self._rng = np.random.default_rng([self.seed, 0xFB])
        return self._rng

    @property
    def run_dir(self) -> Path:
        return Path(self.config.run_root) / self.run_id


@dataclass(frozen=True)
class WorkflowNode:
    name: str
    transform: Callable[[WorkflowState], WorkflowState]
    skippable: bool = False


@dataclass
class WorkflowGraph:
    nodes: list[WorkflowNode]
    # after-node predicates: name -> function returning the next node name
    # (None follows the natural order)
    edges: dict[str, Callable[[WorkflowState], str | None]] = field(default_factory=dict)

    def index_of(self, name: str) -> int:
        for i, node in enumerate(self.nodes):
            if node.name == name:
                return i
        raise KeyError(name)


# --- node transforms ---------------------------------------------------------


def _node_ingest(state: WorkflowState) -> WorkflowState:
    path = Path(state.config.dataset)
    if not path.exists():
        raise FileNotFoundError(f"dataset {path} does not exist")
    frames: dict[TrackKey, TrackFrame] = {}
    if path.is_dir():
        out_dir = state.run_dir / "ingested"
        summary = ingest_mailbox(path, out_dir)
        state.log("ingest", f"mailbox: wrote {sorted(summary.files_written)}")
        for name in summary.files_written:
            frames.update(read_frames_csv((out_dir / name).read_text()))
        state.artifacts["ingested"] = str(out_dir)
    else:
        frames = read_frames_csv(path.read_text())
    policy = ImputePolicy(state.config.impute)
    for key, frame in sorted(frames.items()):
        imputed = impute_missing(frame, policy)
        missing = [c for c in state.config.feature_columns if c not in imputed.columns]
        if missing:
            state.log("ingest", f"track {key.dss}/{key.scid}: missing {missing}, skipped")
            continue
        state.tracks[key] = TrackWork(full_frame=imputed)
        state.log("ingest", f"track {key.dss}/{key.scid}: {imputed.n_rows} rows")
    if not state.tracks:
        raise ValueError("no usable tracks in dataset")
    return state


def _node_preprocess(state: WorkflowState) -> WorkflowState:
    config = state.config
    features = list(config.feature_columns)
    for key, work in state.tracks.items():
        frame = work.full_frame
        cut = int(frame.n_rows * config.train_fraction)
        work.train_cut_row = cut
        model_frame = TrackFrame(
            key,
            frame.timestamps,
            {name: frame.column(name) for name in features},
            frame.provenance,
        )
        removed: list[int] = []
        if config.iforest_contamination > 0 and cut > 1:
            train_rows = model_frame.take(np.arange(cut))
            forest = fit_isolation_forest(
                train_rows.values(),
                ForestConfig(contamination=config.iforest_contamination, seed=config.seed),
            )
            scores = iforest_scores(forest, train_rows.values())
            kept_train, removed = filter_outliers(
                train_rows, scores, config.iforest_contamination
            )
            keep_idx = np.concatenate(
                [
                    np.setdiff1d(np.arange(cut), np.asarray(removed, dtype=int)),
                    np.arange(cut, frame.n_rows),
                ]
            )
            model_frame = model_frame.take(keep_idx)
            work.train_cut_row = cut - len(removed)
        work.model_frame = model_frame
        work.removed_rows = removed
        state.log(
            "preprocess",
            f"track {key.dss}/{key.scid}: {len(removed)} training outliers removed, "
            f"{model_frame.n_rows} rows kept",
        )
    return state


def _threshold_method(config: WorkflowConfig):
    if config.threshold_method == "mean-k-sigma":
        return MeanKSigma(config.threshold_k)
    if config.threshold_method == "percentile":
        return Percentile(config.threshold_p)
    raise BadConfigError(f"unknown threshold method {config.threshold_method!r}")


def _node_score(state: WorkflowState) -> WorkflowState:
    config = state.config
    features = list(config.feature_columns)
    method = _threshold_method(config)
    checkpoints_dir = state.run_dir / "checkpoints"
    checkpoints_dir.mkdir(parents=True, exist_ok=True)
    for key, work in state.tracks.items():
        model_frame = work.model_frame
        assert model_frame is not None
        cut = work.train_cut_row
        scaler = fit_minmax(model_frame.take(np.arange(cut)) if cut > 1 else model_frame)
        scaled = apply_minmax(model_frame, scaler)
        batch = make_windows(scaled, config.window, features)
        train_stop = 0
        for w, (lo, hi) in enumerate(batch.index_map):
            if hi <= cut:
                train_stop = w + 1
        test_start = next(
            (w for w, (lo, _) in enumerate(batch.index_map) if lo >= cut), batch.n_windows
        )
        train_b = batch.slice(0, train_stop)
        test_b = batch.slice(test_start, batch.n_windows)
        if train_b.n_windows == 0 or test_b.n_windows == 0:
            state.log("score", f"track {key.dss}/{key.scid}: too short to train, skipped")
            continue
        model_config = ModelConfig(
            kind=ModelKind(config.model_kind),
            input_size=len(features),
            seq_len=config.window.length,
            hidden_size=config.hidden_size,
            n_layers=config.n_layers,
            output_size=len(features),
            dropout=config.dropout,
            seed=config.seed,
            n_heads=config.n_heads,
        )
        hyper = OptimHyper(
            lr=config.lr,
            weight_decay=config.weight_decay,
            max_grad_norm=config.max_grad_norm,
            epochs=config.epochs,
            batch_size=config.batch_size,
        )
        trained = train(model_config, hyper, train_b, test_b)
        score_b = batch if config.score_scope == "full" else test_b
        errors = reconstruct_errors(trained, score_b)
        threshold = detect.compute_threshold(errors, method)
        events = detect.flag_anomalies(errors, threshold, score_b, model_frame, config.model_kind)
        for event in events:
            detect.attach_context(event, work.full_frame, config.context_columns)
        work.score_batch = score_b
        work.errors = errors
        work.threshold = threshold
        state.anomalies.extend(events)
        ckpt = checkpoints_dir / f"dss{key.dss}_scid{key.scid}.json"
        save_checkpoint(trained, ckpt)
        state.artifacts[f"checkpoint:{key.dss}/{key.scid}"] = str(ckpt)
        state.log(
            "score",
            f"track {key.dss}/{key.scid}: {len(events)} anomalies above "
            f"threshold {threshold:.6g} (final val loss {trained.history[-1][1]:.6g})",
        )
    state.anomalies.sort(key=lambda e: (e.timestamp_us, e.key))
    return state


def _node_verify(state: WorkflowState) -> WorkflowState:
    hyper = state.config.qhyper
    if state.qtable.visits.sum() == 0 and state.qtable.epsilon != hyper.epsilon:
        state.qtable.epsilon = hyper.epsilon
    chosen = 0
    for event in state.anomalies:
        if event.severity is None:
            event.severity = verify.severity_of(event, hyper).value
        needs_choice = (
            event.status is EventStatus.PENDING and event.chosen_action is None
        ) or (event.status is EventStatus.INFO_REQUESTED and event.chosen_action is None)
        if not needs_choice:
            continue
        allowed = (
            (VerifierAction.CONFIRM, VerifierAction.REJECT)
            if event.status is EventStatus.INFO_REQUESTED
            else (VerifierAction.CONFIRM, VerifierAction.REJECT, VerifierAction.REQUEST_INFO)
        )
        action = verify.choose_action(
            state.qtable, verify.SeverityState(event.severity), hyper, state.rng, allowed
        )
        event.chosen_action = action.value
        if action is VerifierAction.REQUEST_INFO and event.status is EventStatus.PENDING:
            event.transition(EventStatus.INFO_REQUESTED)
        chosen += 1
    state.log("verify", f"{chosen} actions chosen over {len(state.anomalies)} anomalies")
    return state


def _node_explain(state: WorkflowState) -> WorkflowState:
    if state.anomalies:
        lines = []
        for event in state.anomalies:
            lines.append(
                f"DSS-{event.key.dss}/SCID {event.key.scid} at {event.timestamp_us}: "
                f"error {event.error:.6g} over threshold {event.threshold:.6g}, "
                f"severity {event.severity}, action {event.chosen_action}, "
                f"status {event.status.value}"
            )
        text = "Anomaly review:\n" + "\n".join(lines)
    else:
        text = "Anomaly review: no anomalies detected."
    state.messages.append(("assistant", text))
    state.log("explain", f"summarized {len(state.anomalies)} anomalies")
    return state


def _node_plan(state: WorkflowState) -> WorkflowState:
    counts = {status: 0 for status in EventStatus}
    for event in state.anomalies:
        counts[event.status] += 1
    to_report = sum(
        1
        for e in state.anomalies
        if e.status is EventStatus.CONFIRMED
        or (e.status is EventStatus.PENDING and e.chosen_action == VerifierAction.CONFIRM.value)
    )
    if not state.anomalies:
        state.decision = "no anomalies detected"
    else:
        state.decision = (
            f"{len(state.anomalies)} anomalies: "
            f"{counts[EventStatus.CONFIRMED]} confirmed, "
            f"{counts[EventStatus.REJECTED]} rejected, "
            f"{counts[EventStatus.PENDING]} pending, "
            f"{counts[EventStatus.INFO_REQUESTED]} awaiting info; "
            f"plan: generate {to_report} discrepancy reports"
        )
    state.log("plan", state.decision)
    return state


def _feedback_source(state: WorkflowState) -> FeedbackSource | None:
    if state.config.feedback_mode == "none":
        return None
    if state.config.feedback_mode == "agree-all":
        return agree_all_source
    if state.config.feedback_mode == "source":
        return state.config.feedback_source
    raise BadConfigError(f"unknown feedback mode {state.config.feedback_mode!r}")


def _node_human_feedback(state: WorkflowState) -> WorkflowState:
    source = _feedback_source(state)
    if source is None:
        state.log("human_feedback", "skipped (no feedback source configured)")
        return state
    hyper = state.config.qhyper
    processed = 0
    for event in state.anomalies:
        if event.status not in (EventStatus.PENDING, EventStatus.INFO_REQUESTED):
            continue
        if event.chosen_action is None:
            continue
        verdict = source(event, state)
        if verdict is None:
            continue
        action = VerifierAction(event.chosen_action)
        signal = FeedbackSignal(verdict=verdict, operator="workflow")
        verify.apply_feedback(
            state.qtable, verify.SeverityState(event.severity), action, signal, hyper
        )
        state.feedback.append(signal)
        new_status = verify.resolve_status(action, verdict)
        if action is VerifierAction.REQUEST_INFO:
            # stay info-requested; verify re-chooses between confirm/reject
            event.chosen_action = None
        elif EventStatus(new_status) is not event.status:
            event.transition(EventStatus(new_status))
        processed += 1
    state.log("human_feedback", f"processed {processed} feedback signals")
    return state


def _node_report(state: WorkflowState) -> WorkflowState:
    config = state.config
    backend = (
        RemoteBackend(base_url=config.backend_url) if config.backend_url else TemplateBackend()
    )
    reports_dir = state.run_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    written = 0
    for event in state.anomalies:
        if event.status is EventStatus.CONFIRMED:
            verdict = "confirmed"
        elif event.status is EventStatus.PENDING and event.chosen_action == VerifierAction.CONFIRM.value:
            verdict = "agent-confirmed"
        else:
            continue
        report = generate_report(event, verdict, backend)
        (reports_dir / f"{event.id}.json").write_text(json.dumps(report.to_dict(), indent=2))
        (reports_dir / f"{event.id}.md").write_text(render_report_markdown(report, event))
        written += 1
    state.artifacts["reports"] = str(reports_dir)
    state.log("report", f"generated {written} discrepancy reports")
    return state


_TRANSFORMS = {
    "ingest": _node_ingest,
    "preprocess": _node_preprocess,
    "score": _node_score,
    "verify": _node_verify,
    "explain": _node_explain,
    "plan": _node_plan,
    "human_feedback": _node_human_feedback,
    "report": _node_report,
}


def build_workflow(config: WorkflowConfig) -> WorkflowGraph:
    """Assemble the node list and the bounded feedback loop edge."""
    if not config.feature_columns:
        raise BadConfigError("feature_columns must be non-empty")
    if not 0.0 < config.train_fraction < 1.0:
        raise BadConfigError("train_fraction must be in (0, 1)")
    if config.feedback_loop_max < 0:
        raise BadConfigError("feedback_loop_max must be >= 0")
    if config.epochs < 0:
        raise BadConfigError("epochs must be >= 0")
    if config.score_scope not in ("full", "test"):
        raise BadConfigError(f"unknown score scope {config.score_scope!r}")
    if config.model_kind not in [k.value for k in ModelKind]:
        raise BadConfigError(f"unknown model kind {config.model_kind!r}")
    if config.feedback_mode not in ("none", "agree-all", "source"):
        raise BadConfigError(f"unknown feedback mode {config.feedback_mode!r}")
    if config.feedback_mode == "source" and config.feedback_source is None:
        raise BadConfigError("feedback mode 'source' requires a feedback_source")
    _threshold_method(config)

    no_feedback = config.feedback_mode == "none"
    nodes = [
        WorkflowNode(
            name,
            _TRANSFORMS[name],
            skippable=(name == "human_feedback" and no_feedback),
        )
        for name in NODE_ORDER
    ]

    def after_feedback(state: WorkflowState) -> str | None:
        # pure predicate: loop bookkeeping happens in step()
        if no_feedback or state.loop_count >= config.feedback_loop_max:
            return None
        unresolved = any(
            e.status in (EventStatus.PENDING, EventStatus.INFO_REQUESTED)
            for e in state.anomalies
        )
        return "verify" if unresolved else None

    return WorkflowGraph(nodes=nodes, edges={"human_feedback": after_feedback})


def step(graph: WorkflowGraph, state: WorkflowState) -> WorkflowState:
    """Apply the node at the cursor; advance (or loop) the cursor."""
    if state.failed or state.cursor >= len(graph.nodes):
        return state
    node = graph.nodes[state.cursor]
    if node.skippable:
        state.log(node.name, "skipped")
    else:
        try:
            state = node.transform(state)
        except Exception as exc:
            state.failed = True
            state.log(node.name, f"FAILED: {exc}")
            state.cursor = len(graph.nodes)
            return state
    jump = graph.edges.get(node.name)
    target = jump(state) if jump else None
    if target is not None:
        next_cursor = graph.index_of(target)
        if next_cursor <= state.cursor:
            state.loop_count += 1
            state.log(node.name, f"loop back to {target} (iteration {state.loop_count})")
        state.cursor = next_cursor
    else:
        state.cursor += 1
    return state


def _write_artifacts(state: WorkflowState) -> None:
    run_dir = state.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    errors_doc = []
    for key, work in state.tracks.items():
        if work.errors is None or work.score_batch is None:
            continue
        batch = work.score_batch
        errors_doc.append(
            {
                "dss": key.dss,
                "scid": key.scid,
                "threshold": work.threshold,
                "errors": [float(e) for e in work.errors],
                "timestamps_us": [
                    int(work.model_frame.timestamps[hi - 1]) for _, hi in batch.index_map
                ],
                "flagged_windows": [
                    int(w) for w in np.flatnonzero(work.errors > work.threshold)
                ],
            }
        )
    errors_path = run_dir / "errors.json"
    errors_path.write_text(json.dumps(errors_doc))
    state.artifacts["errors"] = str(errors_path)

    state_doc = {
        "run_id": state.run_id,
        "seed": state.seed,
        "decision": state.decision,
        "failed": state.failed,
        "anomalies": [e.to_dict() for e in state.anomalies],
        "messages": [list(m) for m in state.messages],
        "feedback": [
            {"verdict": f.verdict.value, "note": f.note, "operator": f.operator}
            for f in state.feedback
        ],
        "qtable": state.qtable.to_dict(),
        "artifacts": dict(state.artifacts),
        "config": state.config.to_snapshot(),
    }
    state_path = run_dir / "state.json"
    state_path.write_text(json.dumps(state_doc, indent=2))
    state.artifacts["state"] = str(state_path)
    logs_path = run_dir / "logs.txt"
    logs_path.write_text("\n".join(state.logs) + "\n")
    state.artifacts["logs"] = str(logs_path)


def run(graph: WorkflowGraph, state: WorkflowState) -> WorkflowState:
    """Execute to the terminal state and write the run directory."""
    if not state.run_id:
        state.run_id = make_run_id()
    state.log("run", f"workflow started (run {state.run_id}, seed {state.seed})")
    while not state.failed and state.cursor < len(graph.nodes):
        state = step(graph, state)
    state.log("run", "workflow finished" if not state.failed else "workflow halted on failure")
    _write_artifacts(state)
    return state


def run_workflow(config: WorkflowConfig, run_id: str | None = None) -> WorkflowState:
    graph = build_workflow(config)
    state = WorkflowState(config=config, seed=config.seed, run_id=run_id or "")
    return run(graph, state)
