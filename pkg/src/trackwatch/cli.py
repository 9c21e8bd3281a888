"""Command-line entry points binding ingestion, training, detection,
operator review, the HTTP service, reporting, and log replay.

Exit codes: 0 success, 2 bad input, 3 internal failure. The data root
(event log + run directories) comes from --data-dir or TW_DATA_DIR.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np


def _data_dir(args) -> Path:
    return Path(args.data_dir or os.environ.get("TW_DATA_DIR", "tw-data"))


def _store(args):
    from .service import ServiceStore

    return ServiceStore(_data_dir(args))


def cmd_ingest(args) -> int:
    from .ingest import MessageFilter, ingest_mailbox, parse_instant

    date_range = None
    if args.date_from or args.date_to:
        lo = parse_instant(args.date_from) if args.date_from else 0
        hi = parse_instant(args.date_to) if args.date_to else 2**62
        date_range = (lo, hi)
    flt = MessageFilter(
        date_range=date_range,
        recipient=args.recipient,
        subject_substring=args.subject,
    )
    summary = ingest_mailbox(args.mailbox, args.out, flt)
    for name, rows in sorted(summary.files_written.items()):
        print(f"wrote {name}: {rows} records")
    for label, report in sorted(summary.reports.items()):
        line = f"{label}: parsed {report.rows_parsed}, rejected {report.rows_rejected}"
        if report.no_data:
            line += " (no data, omitted)"
        print(line)
    if summary.unknown_messages:
        print(f"unclassified messages: {len(summary.unknown_messages)}")
    for error in summary.errors:
        print(f"error: {error}", file=sys.stderr)
    return 0


def _parse_features(raw: str) -> tuple[str, ...]:
    features = tuple(f.strip() for f in raw.split(",") if f.strip())
    if not features:
        raise SystemExit("at least one feature column is required")
    return features


def cmd_train(args) -> int:
    from .core import ImputeKind, ImputePolicy, TrackKey, impute_missing, read_frames_csv, select_track
    from .nn import ModelConfig, ModelKind, OptimHyper, save_checkpoint, train
    from .preprocess import WindowSpec, apply_minmax, chrono_split, fit_minmax, make_windows

    frames = read_frames_csv(Path(args.dataset).read_text())
    if args.dss is not None and args.scid is not None:
        frame = select_track(frames, TrackKey(args.dss, args.scid))
    else:
        frame = next(iter(frames.values()))
    if frame.n_rows == 0:
        print("selected track has no rows", file=sys.stderr)
        return 2
    features = _parse_features(args.features)
    frame = impute_missing(frame, ImputePolicy(ImputeKind.FORWARD_FILL))
    scaler = fit_minmax(frame, features)
    scaled = apply_minmax(frame, scaler)
    batch = make_windows(scaled, WindowSpec(length=args.window, stride=args.stride), list(features))
    train_b, val_b = chrono_split(batch, args.train_fraction)
    config = ModelConfig(
        kind=ModelKind(args.model),
        input_size=len(features),
        seq_len=args.window,
        hidden_size=args.hidden,
        n_layers=args.layers,
        output_size=len(features),
        dropout=args.dropout,
        seed=args.seed,
    )
    hyper = OptimHyper(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size)
    trained = train(config, hyper, train_b, val_b)
    save_checkpoint(trained, args.out)
    Path(str(args.out) + ".scaler.json").write_text(scaler.to_json())
    first, last = trained.history[0][1], trained.history[-1][1]
    print(f"trained {args.model} for {args.epochs} epochs: val {first:.6g} -> {last:.6g}")
    print(f"checkpoint: {args.out}")
    return 0


def cmd_detect(args) -> int:
    store = _store(args)
    config = {
        "feature_columns": list(_parse_features(args.features)),
        "model_kind": args.model,
        "epochs": args.epochs,
        "hidden_size": args.hidden,
        "n_layers": args.layers,
        "lr": args.lr,
        "batch_size": args.batch_size,
        "window": {"length": args.window, "stride": args.stride},
        "threshold_k": args.threshold_k,
        "seed": args.seed,
    }
    if args.backend_url:
        config["backend_url"] = args.backend_url
    run_id = store.start_run(args.dataset, config=config, wait=True)
    record = store.get_run(run_id)
    pending = store.list_pending(run_id)
    print(f"run {run_id}: {record.status}")
    print(f"decision: {record.decision}")
    print(f"pending anomalies: {len(pending)}")
    for row in pending:
        print(
            f"  {row['id']}  DSS-{row['dss']}/SCID {row['scid']}  "
            f"severity {row['severity']}  action {row['chosen_action']}  "
            f"error {row['error']:.6g} > {row['threshold']:.6g}"
        )
    store.close()
    return 0


def cmd_review(args) -> int:
    store = _store(args)
    pending = store.list_pending(args.run)
    if not pending:
        print("no pending anomalies")
        store.close()
        return 0
    print(f"{len(pending)} pending anomalies")
    for row in pending:
        print(
            f"\nevent {row['id']}  DSS-{row['dss']}/SCID {row['scid']} at {row['timestamp_us']}"
            f"\n  error {row['error']:.6g} over threshold {row['threshold']:.6g}"
            f"\n  severity {row['severity']}, verifier action {row['chosen_action']}"
        )
        if args.auto_agree:
            answer = "a"
        else:
            answer = input("  [a]gree / [d]isagree / [s]kip? ").strip().lower() or "s"
        if answer.startswith("a"):
            verdict = "Agree"
        elif answer.startswith("d"):
            verdict = "Disagree"
        else:
            print("  skipped")
            continue
        result = store.submit_feedback(row["id"], verdict, operator=args.operator)
        delta = result["q_delta"]
        print(
            f"  -> {result['new_status']}; Q({delta['state']}, {delta['action']}) "
            f"{delta['old']:.4g} -> {delta['new']:.4g}"
        )
    store.close()
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    store = _store(args)
    app = create_app(store)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_report(args) -> int:
    store = _store(args)
    if args.run:
        run_ids = [args.run]
    else:
        run_ids = sorted(store.state.runs)
    written = 0
    out_dir = Path(args.out) if args.out else None
    for run_id in run_ids:
        for event_id, report in sorted(store.state.reports.items()):
            if store.state.anomaly_run.get(event_id) not in run_ids:
                continue
            if args.date_from or args.date_to:
                from .ingest import parse_instant

                ts = report["timestamp_us"]
                if args.date_from and ts < parse_instant(args.date_from):
                    continue
                if args.date_to and ts > parse_instant(args.date_to):
                    continue
            if out_dir:
                out_dir.mkdir(parents=True, exist_ok=True)
                (out_dir / f"{event_id}.json").write_text(json.dumps(report, indent=2))
            else:
                print(json.dumps(report))
            written += 1
    print(f"{written} reports", file=sys.stderr)
    store.close()
    return 0


def cmd_replay(args) -> int:
    from .service import CorruptLogError, replay_log

    log_path = args.log or (_data_dir(args) / "events.log")
    try:
        state = replay_log(log_path)
    except CorruptLogError as exc:
        print(f"log corrupt at seq {exc.seq}; prior state intact", file=sys.stderr)
        state = exc.state
    print(f"events applied: {state.last_seq}")
    print(f"runs: {len(state.runs)}")
    for run_id, record in sorted(state.runs.items()):
        print(f"  {run_id}: {record.status}")
    counts: dict[str, int] = {}
    for anomaly in state.anomalies.values():
        counts[anomaly.status.value] = counts.get(anomaly.status.value, 0) + 1
    print(f"anomalies: {dict(sorted(counts.items()))}")
    print(f"reports: {len(state.reports)}")
    print("qtable:")
    for row in np.round(state.qtable.q, 4).tolist():
        print(f"  {row}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trackwatch")
    parser.add_argument("--data-dir", help="data root (default: $TW_DATA_DIR or ./tw-data)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a transmitter mailbox into canonical CSVs")
    p.add_argument("--mailbox", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--date-from", dest="date_from")
    p.add_argument("--date-to", dest="date_to")
    p.add_argument("--recipient")
    p.add_argument("--subject")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one reconstruction model on a track")
    p.add_argument("--dataset", required=True)
    p.add_argument("--features", required=True, help="comma-separated column names")
    p.add_argument("--model", default="LstmRecon", choices=["LstmRecon", "GanLstm", "Tst"])
    p.add_argument("--dss", type=int)
    p.add_argument("--scid", type=int)
    p.add_argument("--window", type=int, default=16)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--train-fraction", type=float, default=0.75)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="checkpoint.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="run the full detection workflow on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--model", default="LstmRecon", choices=["LstmRecon", "GanLstm", "Tst"])
    p.add_argument("--window", type=int, default=4)
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--threshold-k", type=float, default=3.0)
    p.add_argument("--backend-url")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("review", help="review pending anomalies interactively")
    p.add_argument("--run")
    p.add_argument("--operator", default="cli")
    p.add_argument("--auto-agree", action="store_true", help="agree with every verdict")
    p.set_defaults(func=cmd_review)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="export generated discrepancy reports")
    p.add_argument("--run")
    p.add_argument("--date-from", dest="date_from")
    p.add_argument("--date-to", dest="date_to")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("replay", help="rebuild state from the event log")
    p.add_argument("--log")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (KeyboardInterrupt, BrokenPipeError):
        return 3
    except SystemExit:
        raise
    except Exception as exc:
        from .agent import BadConfigError
        from .core import CoreError
        from .ingest import IngestError
        from .preprocess import PreprocessError
        from .service import BadDatasetError, UnknownEventError, UnknownRunError

        bad_input = (
            BadConfigError,
            BadDatasetError,
            CoreError,
            IngestError,
            PreprocessError,
            UnknownEventError,
            UnknownRunError,
            FileNotFoundError,
            ValueError,
        )
        if isinstance(exc, bad_input):
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"internal failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
