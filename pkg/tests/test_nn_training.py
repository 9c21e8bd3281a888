"""Trainer behavior: determinism, descent, error scoring, checkpoints."""

from __future__ import annotations

import numpy as np
import pytest

from trackwatch.core import TrackFrame, TrackKey
from trackwatch.nn import (
    EmptyBatchError,
    ModelConfig,
    ModelKind,
    NonFiniteLossError,
    OptimHyper,
    build_model,
    load_checkpoint,
    reconstruct_errors,
    save_checkpoint,
    train,
)
from trackwatch.preprocess import WindowSpec, apply_minmax, chrono_split, fit_minmax, make_windows

from .conftest import make_sine_frame


def _batches(n=120, seq_len=8, n_features=2, noise=0.05, seed=0):
    frame = make_sine_frame(n, noise_sigma=noise, seed=seed, n_features=n_features)
    scaled = apply_minmax(frame, fit_minmax(frame))
    batch = make_windows(scaled, WindowSpec(length=seq_len))
    return chrono_split(batch, 0.75)


def _config(kind, seq_len=8, n_features=2, seed=0, **kw):
    defaults = dict(
        kind=kind,
        input_size=n_features,
        seq_len=seq_len,
        hidden_size=16,
        n_layers=1,
        output_size=n_features,
        dropout=0.1,
        seed=seed,
        n_heads=4 if kind is ModelKind.TST else 4,
    )
    defaults.update(kw)
    return ModelConfig(**defaults)


class TestTrainContract:
    def test_same_seed_bit_identical_histories(self):
        train_b, val_b = _batches()
        config = _config(ModelKind.LSTM_RECON)
        hyper = OptimHyper(lr=1e-3, epochs=3)
        a = train(config, hyper, train_b, val_b)
        b = train(config, hyper, train_b, val_b)
        assert a.history == b.history
        for k, pa in a.named_params().items():
            assert np.array_equal(pa, b.named_params()[k]), k

    def test_zero_epochs_gives_empty_history(self):
        train_b, val_b = _batches()
        trained = train(
            _config(ModelKind.LSTM_RECON), OptimHyper(epochs=0), train_b, val_b
        )
        assert trained.history == []
        assert trained.named_params()

    def test_empty_batch_rejected(self):
        train_b, val_b = _batches()
        empty = val_b.slice(0, 0)
        with pytest.raises(EmptyBatchError):
            train(_config(ModelKind.LSTM_RECON), OptimHyper(epochs=1), empty, val_b)

    def test_feature_count_mismatch(self):
        from trackwatch.nn import ShapeMismatchError

        train_b, val_b = _batches(n_features=2)
        config = _config(ModelKind.LSTM_RECON, n_features=3)
        with pytest.raises(ShapeMismatchError):
            train(config, OptimHyper(epochs=1), train_b, val_b)

    def test_non_finite_loss_aborts(self):
        train_b, val_b = _batches()
        config = _config(ModelKind.LSTM_RECON)
        hyper = OptimHyper(lr=1e25, epochs=8, weight_decay=0.0)
        with np.errstate(over="ignore"), pytest.raises(NonFiniteLossError):
            train(config, hyper, train_b, val_b)

    def test_loss_history_finite(self):
        train_b, val_b = _batches()
        trained = train(
            _config(ModelKind.TST, dropout=0.2), OptimHyper(lr=1e-3, epochs=3), train_b, val_b
        )
        assert len(trained.history) == 3
        assert all(np.isfinite(t) and np.isfinite(v) for t, v in trained.history)


class TestDescent:
    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_validation_loss_descends(self, kind):
        train_b, val_b = _batches(n=150)
        config = _config(kind, dropout=0.1)
        hyper = OptimHyper(lr=2e-3, epochs=25, batch_size=32)
        trained = train(config, hyper, train_b, val_b)
        first = trained.history[0][1]
        last = trained.history[-1][1]
        assert last < first, f"{kind}: {last} !< {first}"


class TestReconstructErrors:
    def test_constant_track_scores_near_zero(self):
        frame = TrackFrame(
            TrackKey(1, 1),
            np.arange(80, dtype=np.int64),
            {"x": np.full(80, 0.3), "y": np.full(80, 0.3)},
        )
        batch = make_windows(frame, WindowSpec(length=6))
        train_b, val_b = chrono_split(batch, 0.8)
        config = _config(ModelKind.LSTM_RECON, seq_len=6, dropout=0.0)
        trained = train(config, OptimHyper(lr=1e-2, epochs=120, weight_decay=0.0), train_b, val_b)
        errors = reconstruct_errors(trained, batch)
        assert np.all(errors <= 1e-3)

    def test_empty_batch_gives_empty_series(self):
        train_b, val_b = _batches()
        trained = train(_config(ModelKind.LSTM_RECON), OptimHyper(epochs=0), train_b, val_b)
        empty = val_b.slice(0, 0)
        assert reconstruct_errors(trained, empty).size == 0

    def test_planted_spike_window_stands_out(self):
        from .conftest import plant_spikes

        frame = make_sine_frame(160, noise_sigma=0.02, seed=3, n_features=1)
        params = fit_minmax(frame)
        scaled = apply_minmax(frame, params)
        batch = make_windows(scaled, WindowSpec(length=8))
        train_b, val_b = chrono_split(batch, 0.7)
        config = _config(ModelKind.LSTM_RECON, n_features=1, dropout=0.0)
        trained = train(config, OptimHyper(lr=5e-3, epochs=30), train_b, val_b)

        spiked = plant_spikes(scaled, rows=[120], magnitude=0.5)
        spiked_batch = make_windows(spiked, WindowSpec(length=8))
        errors = reconstruct_errors(trained, spiked_batch)
        covering = [w for w, (lo, hi) in enumerate(spiked_batch.index_map) if lo <= 120 < hi]
        assert max(errors[covering]) > np.median(errors)

    def test_pure_function_with_dropout_disabled(self):
        train_b, val_b = _batches()
        trained = train(
            _config(ModelKind.LSTM_RECON, dropout=0.5), OptimHyper(lr=1e-3, epochs=2), train_b, val_b
        )
        a = reconstruct_errors(trained, val_b)
        b = reconstruct_errors(trained, val_b)
        assert np.array_equal(a, b)


class TestGanSpecifics:
    def test_discriminator_output_in_unit_interval(self):
        train_b, val_b = _batches()
        config = _config(ModelKind.GAN_LSTM)
        trained = train(config, OptimHyper(lr=1e-3, epochs=2), train_b, val_b)
        p = trained.model.disc.forward(val_b.data)
        assert np.all(p > 0.0) and np.all(p < 1.0)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        train_b, val_b = _batches()
        trained = train(
            _config(ModelKind.LSTM_RECON), OptimHyper(lr=1e-3, epochs=2), train_b, val_b
        )
        path = tmp_path / "model.json"
        save_checkpoint(trained, path)
        loaded = load_checkpoint(path)
        for name, arr in trained.named_params().items():
            assert np.array_equal(arr, loaded.named_params()[name]), name
        assert loaded.history == trained.history
        assert np.array_equal(
            reconstruct_errors(trained, val_b), reconstruct_errors(loaded, val_b)
        )

    def test_magic_checked(self, tmp_path):
        from trackwatch.nn import CheckpointError

        path = tmp_path / "bad.json"
        path.write_text('{"magic": "nope"}')
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_all_architectures_round_trip(self, tmp_path, kind):
        train_b, val_b = _batches()
        trained = train(_config(kind), OptimHyper(epochs=0), train_b, val_b)
        path = tmp_path / f"{kind.value}.json"
        save_checkpoint(trained, path)
        loaded = load_checkpoint(path)
        assert set(loaded.named_params()) == set(trained.named_params())
        assert np.array_equal(
            reconstruct_errors(trained, val_b), reconstruct_errors(loaded, val_b)
        )
