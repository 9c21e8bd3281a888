"""End-to-end demo: synthesize a telemetry track with planted channel
glitches, run the full workflow through the service store, auto-review
the queue, and print where everything landed.

Usage: python scripts/run_demo.py [workdir]
"""

from __future__ import annotations

import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from trackwatch.core import write_frames_csv
from trackwatch.service import ServiceStore, replay_log
from trackwatch.synthetic import make_sine_track, plant_channel_glitches


def main() -> int:
    workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="tw-demo-"))
    workdir.mkdir(parents=True, exist_ok=True)
    noise = 0.05
    frame = make_sine_track(1000, noise_sigma=noise, seed=11, n_features=2)
    spiked, planted = plant_channel_glitches(
        frame, n_glitches=5, noise_sigma=noise, seed=11, region=(520, 990), min_spacing=12
    )
    dataset = workdir / "track.csv"
    dataset.write_text(write_frames_csv([spiked]))
    print(f"dataset: {dataset} (glitches at rows {planted.rows})")

    store = ServiceStore(workdir / "data")
    run_id = store.start_run(
        str(dataset),
        config={
            "feature_columns": ["f0", "f1"],
            "hidden_size": 32,
            "n_layers": 1,
            "window": {"length": 4, "stride": 2},
            "epochs": 60,
            "batch_size": 64,
            "lr": 2e-3,
            "seed": 11,
        },
        wait=True,
    )
    record = store.get_run(run_id)
    print(f"run {run_id}: {record.status}")
    print(f"decision: {record.decision}")

    pending = store.list_pending(run_id)
    print(f"\npending anomalies: {len(pending)}")
    hit = 0
    for row in pending:
        ts_row = row["timestamp_us"] // 2_000_000
        near = any(abs(ts_row - p) <= 4 for p in planted.rows)
        hit += near
        print(
            f"  {row['id']}  row~{ts_row}  severity {row['severity']}  "
            f"action {row['chosen_action']}  {'<- planted' if near else ''}"
        )
    print(f"({hit}/{len(pending)} flagged events sit on planted glitches)")

    for _ in range(3):
        pending = store.list_pending(run_id)
        if not pending:
            break
        for row in pending:
            result = store.submit_feedback(row["id"], "Agree", operator="demo")
            delta = result["q_delta"]
            print(
                f"feedback on {row['id']}: {result['new_status']}  "
                f"Q({delta['state']},{delta['action']}) {delta['old']:.3f} -> {delta['new']:.3f}"
            )

    state = replay_log(workdir / "data" / "events.log")
    print(f"\nreplay check: {state.last_seq} events, matches live: "
          f"{state.snapshot() == store.snapshot()}")
    print(f"reports generated: {len(state.reports)}")
    report_dir = workdir / "data" / "runs" / run_id / "reports"
    for path in sorted(report_dir.glob("*.md"))[:1]:
        print(f"\n--- {path.name} ---")
        print(path.read_text())
    store.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
