"""Reconstruction models: stacked LSTM, adversarial LSTM pair, and a
sequence transformer, each with explicit backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..preprocess import WindowBatch
from .layers import (
    Dropout,
    FeedForward,
    Linear,
    LstmLayer,
    MultiHeadAttention,
    ShapeMismatchError,
    positional_encoding,
    sigmoid,
)
from .losses import bce_grad, bce, mse, mse_grad
from .optim import Adam, OptimHyper, clip_gradients


class EmptyBatchError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    pass


class ModelKind(str, Enum):
    LSTM_RECON = "LstmRecon"
    GAN_LSTM = "GanLstm"
    TST = "Tst"


@dataclass(frozen=True)
class ModelConfig:
    kind: ModelKind
    input_size: int
    seq_len: int
    hidden_size: int = 64
    n_layers: int = 2
    output_size: int = 5
    dropout: float = 0.2
    seed: int = 0
    n_heads: int = 4
    ff_size: int | None = None
    noise_size: int | None = None
    target_indices: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if min(self.input_size, self.seq_len, self.hidden_size, self.n_layers, self.output_size) < 1:
            raise ValueError("all sizes must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.target_indices is None and self.output_size > self.input_size:
            raise ValueError(
                f"output_size {self.output_size} exceeds input_size {self.input_size} "
                "without explicit target_indices"
            )
        if self.target_indices is not None and len(self.target_indices) != self.output_size:
            raise ValueError("target_indices length must equal output_size")

    @property
    def targets(self) -> tuple[int, ...]:
        if self.target_indices is not None:
            return self.target_indices
        return tuple(range(self.output_size))

    @property
    def ff(self) -> int:
        return self.ff_size if self.ff_size is not None else 2 * self.hidden_size

    @property
    def noise(self) -> int:
        return self.noise_size if self.noise_size is not None else self.input_size


def _collect(named: dict[str, object]) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    params: dict[str, np.ndarray] = {}
    grads: dict[str, np.ndarray] = {}
    for prefix, layer in named.items():
        for name, arr in layer.named_params().items():  # type: ignore[attr-defined]
            params[f"{prefix}.{name}"] = arr
        for name, arr in layer.named_grads().items():  # type: ignore[attr-defined]
            grads[f"{prefix}.{name}"] = arr
    return params, grads


class _LstmStack:
    """LSTM layers followed by a per-step linear head."""

    def __init__(self, in_size, hidden, out_size, n_layers, dropout, rng, dtype):
        sizes = [in_size] + [hidden] * n_layers
        self.lstms = [LstmLayer(sizes[i], sizes[i + 1], rng, dtype) for i in range(n_layers)]
        self.drop = Dropout(dropout)
        self.head = Linear(hidden, out_size, rng, dtype)

    def layers(self, prefix: str) -> dict[str, object]:
        named: dict[str, object] = {f"{prefix}.lstm{i}": l for i, l in enumerate(self.lstms)}
        named[f"{prefix}.head"] = self.head
        return named

    def forward(self, X, training, rng):
        h = X
        for lstm in self.lstms:
            h = lstm.forward(h)
        h = self.drop.forward(h, training, rng)
        return self.head.forward(h)

    def backward(self, dY):
        g = self.head.backward(dY)
        g = self.drop.backward(g)
        for lstm in reversed(self.lstms):
            g = lstm.backward(g)
        return g


class LstmReconModel:
    """Stacked LSTM, dropout, then a linear head reconstructing the
    selected features at every step."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        rng = np.random.default_rng(config.seed)
        self.config = config
        self.net = _LstmStack(
            config.input_size,
            config.hidden_size,
            config.output_size,
            config.n_layers,
            config.dropout,
            rng,
            dtype,
        )
        self._layers = self.net.layers("net")

    def named_params(self):
        return _collect(self._layers)[0]

    def named_grads(self):
        return _collect(self._layers)[1]

    def zero_grad(self):
        for layer in self._layers.values():
            layer.zero_grad()  # type: ignore[attr-defined]

    def reconstruct(self, X, training=False, rng=None):
        return self.net.forward(X, training, rng)

    def backward(self, dY):
        return self.net.backward(dY)


class _Discriminator:
    """LSTM stack, last-step linear, sigmoid probability."""

    def __init__(self, in_size, hidden, n_layers, rng, dtype):
        sizes = [in_size] + [hidden] * n_layers
        self.lstms = [LstmLayer(sizes[i], sizes[i + 1], rng, dtype) for i in range(n_layers)]
        self.head = Linear(hidden, 1, rng, dtype)
        self._p = None
        self._h_shape = None

    def layers(self, prefix):
        named = {f"{prefix}.lstm{i}": l for i, l in enumerate(self.lstms)}
        named[f"{prefix}.head"] = self.head
        return named

    def forward(self, X):
        h = X
        for lstm in self.lstms:
            h = lstm.forward(h)
        self._h_shape = h.shape
        logit = self.head.forward(h[:, -1])
        self._p = sigmoid(logit)
        return self._p

    def backward(self, dp):
        p = self._p
        dlogit = dp * p * (1.0 - p)
        dlast = self.head.backward(dlogit)
        dh = np.zeros(self._h_shape, dtype=dlast.dtype)
        dh[:, -1] = dlast
        g = dh
        for lstm in reversed(self.lstms):
            g = lstm.backward(g)
        return g


class GanLstmModel:
    """Adversarial generator/discriminator pair over windows plus an
    encoder to noise space; reconstruction error is the round trip
    through encoder and generator."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        rng = np.random.default_rng(config.seed)
        self.config = config
        nz = config.noise
        self.gen = _LstmStack(
            nz, config.hidden_size, config.input_size, config.n_layers, config.dropout, rng, dtype
        )
        self.disc = _Discriminator(config.input_size, config.hidden_size, config.n_layers, rng, dtype)
        self.enc = _LstmStack(
            config.input_size, config.hidden_size, nz, config.n_layers, 0.0, rng, dtype
        )
        self._layers = {
            **self.gen.layers("gen"),
            **self.disc.layers("disc"),
            **self.enc.layers("enc"),
        }

    def named_params(self):
        return _collect(self._layers)[0]

    def named_grads(self):
        return _collect(self._layers)[1]

    def zero_grad(self):
        for layer in self._layers.values():
            layer.zero_grad()  # type: ignore[attr-defined]

    def group(self, prefix):
        layers = {k: v for k, v in self._layers.items() if k.startswith(prefix + ".")}
        return _collect(layers)

    def reconstruct(self, X, training=False, rng=None):
        z = self.enc.forward(X, training, rng)
        return self.gen.forward(z, training, rng)

    def backward(self, dXhat):
        dz = self.gen.backward(dXhat)
        return self.enc.backward(dz)


class _EncoderBlock:
    def __init__(self, width, heads, ff, dropout, rng, dtype):
        self.attn = MultiHeadAttention(width, heads, rng, dtype)
        self.ffn = FeedForward(width, ff, rng, dtype)
        self.drop1 = Dropout(dropout)
        self.drop2 = Dropout(dropout)

    def layers(self, prefix):
        return {f"{prefix}.attn": self.attn, f"{prefix}.ffn": self.ffn}

    def forward(self, x, training, rng):
        x1 = x + self.drop1.forward(self.attn.forward(x), training, rng)
        return x1 + self.drop2.forward(self.ffn.forward(x1), training, rng)

    def backward(self, d2):
        df = self.drop2.backward(d2)
        dx1 = d2 + self.ffn.backward(df)
        da = self.drop1.backward(dx1)
        dq, dkv = self.attn.backward(da)
        return dx1 + dq + dkv


class _DecoderBlock:
    def __init__(self, width, heads, ff, dropout, rng, dtype):
        self.self_attn = MultiHeadAttention(width, heads, rng, dtype)
        self.cross_attn = MultiHeadAttention(width, heads, rng, dtype)
        self.ffn = FeedForward(width, ff, rng, dtype)
        self.drop1 = Dropout(dropout)
        self.drop2 = Dropout(dropout)
        self.drop3 = Dropout(dropout)

    def layers(self, prefix):
        return {
            f"{prefix}.self_attn": self.self_attn,
            f"{prefix}.cross_attn": self.cross_attn,
            f"{prefix}.ffn": self.ffn,
        }

    def forward(self, y, mem, training, rng):
        y1 = y + self.drop1.forward(self.self_attn.forward(y), training, rng)
        y2 = y1 + self.drop2.forward(self.cross_attn.forward(y1, mem), training, rng)
        return y2 + self.drop3.forward(self.ffn.forward(y2), training, rng)

    def backward(self, d3):
        df = self.drop3.backward(d3)
        dy2 = d3 + self.ffn.backward(df)
        dc = self.drop2.backward(dy2)
        dq, dmem = self.cross_attn.backward(dc)
        dy1 = dy2 + dq
        da = self.drop1.backward(dy1)
        dsq, dskv = self.self_attn.backward(da)
        return dy1 + dsq + dskv, dmem


class TstModel:
    """Input embedding + positional encoding, encoder/decoder attention
    stack, per-step forecast head. The decoder consumes the encoder
    output shifted one step right."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        if config.hidden_size % config.n_heads != 0:
            raise ShapeMismatchError(
                f"hidden_size {config.hidden_size} not divisible by heads {config.n_heads}"
            )
        rng = np.random.default_rng(config.seed)
        self.config = config
        d = config.hidden_size
        self.embed = Linear(config.input_size, d, rng, dtype)
        self.pe = positional_encoding(config.seq_len, d, dtype)
        self.drop_in = Dropout(config.dropout)
        self.encoder = [
            _EncoderBlock(d, config.n_heads, config.ff, config.dropout, rng, dtype)
            for _ in range(config.n_layers)
        ]
        self.decoder = [
            _DecoderBlock(d, config.n_heads, config.ff, config.dropout, rng, dtype)
            for _ in range(config.n_layers)
        ]
        self.head = Linear(d, config.output_size, rng, dtype)
        self._layers: dict[str, object] = {"embed": self.embed, "head": self.head}
        for i, blk in enumerate(self.encoder):
            self._layers.update(blk.layers(f"enc{i}"))
        for i, blk in enumerate(self.decoder):
            self._layers.update(blk.layers(f"dec{i}"))

    def named_params(self):
        return _collect(self._layers)[0]

    def named_grads(self):
        return _collect(self._layers)[1]

    def zero_grad(self):
        for layer in self._layers.values():
            layer.zero_grad()  # type: ignore[attr-defined]

    def reconstruct(self, X, training=False, rng=None):
        if X.shape[1] != self.config.seq_len:
            raise ShapeMismatchError(
                f"sequence length {X.shape[1]} != configured {self.config.seq_len}"
            )
        e = self.embed.forward(X) + self.pe
        e = self.drop_in.forward(e, training, rng)
        for blk in self.encoder:
            e = blk.forward(e, training, rng)
        mem = e
        dec_in = np.zeros_like(mem)
        dec_in[:, 1:] = mem[:, :-1]
        y = dec_in
        for blk in self.decoder:
            y = blk.forward(y, mem, training, rng)
        return self.head.forward(y)

    def backward(self, dY):
        dy = self.head.backward(dY)
        dmem_total = np.zeros_like(dy)
        for blk in reversed(self.decoder):
            dy, dmem = blk.backward(dy)
            dmem_total += dmem
        # the shifted decoder input feeds gradient back one step left
        dmem_total[:, :-1] += dy[:, 1:]
        g = dmem_total
        for blk in reversed(self.encoder):
            g = blk.backward(g)
        g = self.drop_in.backward(g)
        return self.embed.backward(g)


def build_model(config: ModelConfig, dtype=np.float32):
    if config.kind is ModelKind.LSTM_RECON:
        return LstmReconModel(config, dtype)
    if config.kind is ModelKind.GAN_LSTM:
        return GanLstmModel(config, dtype)
    if config.kind is ModelKind.TST:
        return TstModel(config, dtype)
    raise ValueError(f"unknown model kind {config.kind}")


@dataclass
class TrainedModel:
    config: ModelConfig
    model: object
    history: list[tuple[float, float]] = field(default_factory=list)

    def named_params(self) -> dict[str, np.ndarray]:
        return self.model.named_params()  # type: ignore[attr-defined]


def _window_errors(model, X: np.ndarray, targets: tuple[int, ...], chunk: int = 512) -> np.ndarray:
    errors = np.empty(X.shape[0], dtype=np.float64)
    for lo in range(0, X.shape[0], chunk):
        xb = X[lo : lo + chunk]
        out = model.reconstruct(xb, training=False)
        if out.shape[-1] != len(targets):  # full-width generator output
            out = out[..., targets]
        diff = np.asarray(out, dtype=np.float64) - np.asarray(xb[..., targets], dtype=np.float64)
        errors[lo : lo + xb.shape[0]] = np.mean(diff * diff, axis=(1, 2))
    return errors


def reconstruct_errors(trained: TrainedModel, batch: WindowBatch) -> np.ndarray:
    """Per-window reconstruction MSE over the configured features, aligned
    with the batch's window order; dropout disabled."""
    if batch.n_windows == 0:
        return np.empty(0, dtype=np.float64)
    if batch.data.shape[2] != trained.config.input_size:
        raise ShapeMismatchError(
            f"batch has {batch.data.shape[2]} features, model expects {trained.config.input_size}"
        )
    return _window_errors(trained.model, batch.data, trained.config.targets)


def _check_finite(value: float, where: str) -> float:
    if not np.isfinite(value):
        raise NonFiniteLossError(f"non-finite loss at {where}: {value}")
    return value


def train(
    config: ModelConfig,
    hyper: OptimHyper,
    train_batch: WindowBatch,
    val_batch: WindowBatch,
) -> TrainedModel:
    """Fit the configured architecture; fully deterministic given the seed.

    Batches run in temporal order without shuffling (the last partial
    batch is kept); the history records one (train, validation) loss pair
    per epoch.
    """
    if train_batch.n_windows == 0 or val_batch.n_windows == 0:
        raise EmptyBatchError("train and validation batches must be non-empty")
    if train_batch.data.shape[2] != config.input_size:
        raise ShapeMismatchError(
            f"batch has {train_batch.data.shape[2]} features, config expects {config.input_size}"
        )
    dtype = np.float32
    model = build_model(config, dtype)
    rng = np.random.default_rng([config.seed, 7])
    targets = config.targets
    X = train_batch.data
    Xval = val_batch.data
    history: list[tuple[float, float]] = []

    if config.kind is ModelKind.GAN_LSTM:
        gen_params, gen_grads = model.group("gen")
        disc_params, disc_grads = model.group("disc")
        enc_params, enc_grads = model.group("enc")
        opt_gen = Adam(gen_params, hyper)
        opt_disc = Adam(disc_params, hyper)
        opt_enc = Adam(enc_params, hyper)
    else:
        params = model.named_params()
        grads = model.named_grads()
        opt = Adam(params, hyper)

    for epoch in range(hyper.epochs):
        batch_losses = []
        for lo in range(0, X.shape[0], hyper.batch_size):
            xb = X[lo : lo + hyper.batch_size]
            where = f"epoch {epoch} batch {lo // hyper.batch_size}"
            if config.kind is ModelKind.GAN_LSTM:
                B, L, _ = xb.shape
                nz = config.noise
                ones = np.ones((B, 1), dtype=dtype)
                zeros = np.zeros((B, 1), dtype=dtype)
                # discriminator: real up, generated down
                model.zero_grad()
                z = rng.standard_normal((B, L, nz), dtype=dtype)
                fake = model.gen.forward(z, True, rng)
                p_real = model.disc.forward(xb)
                d_loss = bce(p_real, ones)
                model.disc.backward(bce_grad(p_real, ones))
                p_fake = model.disc.forward(fake)
                d_loss += bce(p_fake, zeros)
                model.disc.backward(bce_grad(p_fake, zeros))
                _check_finite(d_loss, where + " (disc)")
                clip_gradients(disc_grads, hyper.max_grad_norm)
                opt_disc.step(disc_grads)
                # generator: fool the discriminator
                model.zero_grad()
                z = rng.standard_normal((B, L, nz), dtype=dtype)
                fake = model.gen.forward(z, True, rng)
                p_fake = model.disc.forward(fake)
                g_loss = bce(p_fake, ones)
                _check_finite(g_loss, where + " (gen)")
                dfake = model.disc.backward(bce_grad(p_fake, ones))
                model.gen.backward(dfake)
                clip_gradients(gen_grads, hyper.max_grad_norm)
                opt_gen.step(gen_grads)
                # cycle: encoder and generator reconstruct the window
                model.zero_grad()
                xhat = model.reconstruct(xb, training=True, rng=rng)
                cycle = _check_finite(mse(xhat, xb), where + " (cycle)")
                model.backward(mse_grad(xhat, xb))
                clip_gradients({**gen_grads, **enc_grads}, hyper.max_grad_norm)
                opt_gen.step(gen_grads)
                opt_enc.step(enc_grads)
                batch_losses.append(cycle)
            else:
                model.zero_grad()
                out = model.reconstruct(xb, training=True, rng=rng)
                tb = xb[..., targets]
                batch_loss = _check_finite(mse(out, tb), where)
                model.backward(mse_grad(out, tb))
                clip_gradients(grads, hyper.max_grad_norm)
                opt.step(grads)
                batch_losses.append(batch_loss)
        val_loss = _check_finite(
            float(np.mean(_window_errors(model, Xval, targets))), f"epoch {epoch} validation"
        )
        history.append((float(np.mean(batch_losses)), val_loss))
    return TrainedModel(config=config, model=model, history=history)
