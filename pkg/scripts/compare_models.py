"""Train all three architectures on the same synthetic track and compare
reconstruction quality and loss trajectories.

Usage: python scripts/compare_models.py [--epochs N] [--points N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from trackwatch.nn import ModelConfig, ModelKind, OptimHyper, reconstruct_errors, train
from trackwatch.preprocess import WindowSpec, apply_minmax, chrono_split, fit_minmax, make_windows
from trackwatch.synthetic import make_sine_track


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--epochs", type=int, default=40)
    parser.add_argument("--points", type=int, default=200)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    frame = make_sine_track(args.points, noise_sigma=0.05, seed=42)
    scaled = apply_minmax(frame, fit_minmax(frame))
    batch = make_windows(scaled, WindowSpec(length=16))
    train_b, val_b = chrono_split(batch, 0.75)
    print(f"{batch.n_windows} windows ({train_b.n_windows} train / {val_b.n_windows} val)\n")

    learning_rates = {ModelKind.LSTM_RECON: 2e-3, ModelKind.GAN_LSTM: 2e-3, ModelKind.TST: 1e-3}
    for kind in ModelKind:
        config = ModelConfig(
            kind=kind,
            input_size=2,
            seq_len=16,
            hidden_size=32,
            n_layers=2,
            output_size=2,
            dropout=0.2,
            seed=args.seed,
            n_heads=4,
        )
        hyper = OptimHyper(lr=learning_rates[kind], epochs=args.epochs, batch_size=32)
        started = time.time()
        trained = train(config, hyper, train_b, val_b)
        elapsed = time.time() - started
        errors = reconstruct_errors(trained, val_b)
        first, last = trained.history[0][1], trained.history[-1][1]
        print(f"{kind.value:10s}  {elapsed:6.1f}s  val {first:.5f} -> {last:.5f} "
              f"(x{last / first:.3f})  val error mean {errors.mean():.5f} "
              f"p95 {np.percentile(errors, 95):.5f}")
        checkpoints = [f"{epoch:3d}: train {t:.5f}  val {v:.5f}"
                       for epoch, (t, v) in enumerate(trained.history)]
        for line in checkpoints[:: max(1, len(checkpoints) // 5)]:
            print(f"    {line}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
