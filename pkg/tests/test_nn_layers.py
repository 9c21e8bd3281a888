"""Layer forward values and analytic-vs-numeric gradient checks (64-bit)."""

from __future__ import annotations

import math

import numpy as np
import pytest

from trackwatch.nn import (
    Dropout,
    Linear,
    LstmLayer,
    LstmParams,
    ModelConfig,
    ModelKind,
    MultiHeadAttention,
    OddWidthError,
    OptimHyper,
    ShapeMismatchError,
    adam_step,
    bce,
    build_model,
    clip_gradients,
    loss,
    lstm_cell_step,
    mse,
    positional_encoding,
)
from trackwatch.nn.losses import mse_grad

EPS = 1e-5
REL_TOL = 1e-4


def numeric_grad(f, arr: np.ndarray) -> np.ndarray:
    """Central finite differences of scalar f() w.r.t. arr, in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + EPS
        hi = f()
        flat[i] = orig - EPS
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * EPS)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
    return float(np.linalg.norm(analytic - numeric) / denom)


def check_param_grads(model_like, f, analytic: dict[str, np.ndarray], params: dict[str, np.ndarray]):
    for name, arr in params.items():
        num = numeric_grad(f, arr)
        err = rel_error(analytic[name], num)
        assert err <= REL_TOL, f"{name}: relative error {err:.2e}"


class TestLstmCellStep:
    def test_all_zero_gives_zero_state(self):
        rng = np.random.default_rng(0)
        params = LstmParams.init(3, 4, rng, np.float64)
        for name in vars(params):
            getattr(params, name).fill(0.0)
        h, c = lstm_cell_step(params, np.zeros(3), np.zeros(4), np.zeros(4))
        assert np.allclose(h, 0.0) and np.allclose(c, 0.0)

    def test_zero_params_halve_previous_cell(self):
        # gates sit at sigmoid(0)=0.5 with zero weights, so c' = c/2
        rng = np.random.default_rng(0)
        params = LstmParams.init(2, 3, rng, np.float64)
        for name in vars(params):
            getattr(params, name).fill(0.0)
        h, c = lstm_cell_step(params, np.zeros(2), np.zeros(3), np.ones(3))
        assert np.allclose(c, 0.5)
        assert np.allclose(h, 0.5 * math.tanh(0.5))

    def test_wrong_input_length(self):
        params = LstmParams.init(3, 4, np.random.default_rng(0), np.float64)
        with pytest.raises(ShapeMismatchError):
            lstm_cell_step(params, np.zeros(5), np.zeros(4), np.zeros(4))


class TestPositionalEncoding:
    def test_row_zero_alternates(self):
        pe = positional_encoding(4, 6, np.float64)
        assert np.allclose(pe[0], [0, 1, 0, 1, 0, 1])

    def test_first_position_sine(self):
        pe = positional_encoding(2, 4, np.float64)
        assert pe[1, 0] == pytest.approx(math.sin(1.0), abs=1e-9)

    def test_odd_width_rejected(self):
        with pytest.raises(OddWidthError):
            positional_encoding(4, 5)

    def test_values_bounded(self):
        pe = positional_encoding(50, 16)
        assert np.all(pe >= -1.0) and np.all(pe <= 1.0)


class TestLosses:
    def test_mse_identity(self):
        x = np.array([1.0, 2.0])
        assert loss("mse", x, x) == 0.0

    def test_mse_value(self):
        # ((1-0)^2 + (3-0)^2)/2 = 5
        assert loss("mse", np.zeros(2), np.array([1.0, 3.0])) == pytest.approx(5.0)

    def test_bce_half(self):
        # -ln(0.5) = ln 2
        got = loss("bce", np.array([0.5]), np.array([1.0]))
        assert got == pytest.approx(math.log(2.0), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            mse(np.zeros(2), np.zeros(3))

    def test_bce_gradient_matches_numeric(self):
        rng = np.random.default_rng(1)
        pred = rng.uniform(0.05, 0.95, size=6)
        target = rng.integers(0, 2, size=6).astype(np.float64)
        from trackwatch.nn.losses import bce_grad

        analytic = bce_grad(pred, target)
        num = numeric_grad(lambda: bce(pred, target), pred)
        assert rel_error(analytic, num) <= REL_TOL


class TestAdam:
    def test_first_step_moves_by_lr(self):
        # t=1, g=1: both bias-corrected moments are 1, so the step is
        # -lr/(1+eps), i.e. essentially -lr
        hyper = OptimHyper(lr=0.01, weight_decay=0.0)
        theta = np.array([1.0])
        state = (np.zeros(1), np.zeros(1))
        new, _ = adam_step(state, theta, np.array([1.0]), hyper, t=1)
        assert new[0] == pytest.approx(1.0 - 0.01, rel=1e-6)

    def test_zero_gradient_zero_decay_is_identity(self):
        hyper = OptimHyper(lr=0.01, weight_decay=0.0)
        theta = np.array([2.5])
        new, _ = adam_step((np.zeros(1), np.zeros(1)), theta, np.zeros(1), hyper, t=1)
        assert new[0] == 2.5

    def test_decay_only_step(self):
        # wd=1e-5, lr=1e-4, g=0: theta scales by exactly (1 - 1e-9)
        hyper = OptimHyper(lr=1e-4, weight_decay=1e-5)
        theta = np.array([3.0])
        new, _ = adam_step((np.zeros(1), np.zeros(1)), theta, np.zeros(1), hyper, t=1)
        assert new[0] == 3.0 * (1.0 - 1e-9)


class TestClipGradients:
    def test_scales_when_over(self):
        grads = {"a": np.array([6.0, 8.0])}  # norm 10
        clip_gradients(grads, 5.0)
        assert np.allclose(grads["a"], [3.0, 4.0])

    def test_unchanged_when_under(self):
        grads = {"a": np.array([3.0])}
        clip_gradients(grads, 5.0)
        assert grads["a"][0] == 3.0

    def test_zero_grads_unchanged(self):
        grads = {"a": np.zeros(4)}
        clip_gradients(grads, 5.0)
        assert np.all(grads["a"] == 0.0)


class TestAttentionForward:
    def test_singleton_softmax_is_value_projection(self):
        rng = np.random.default_rng(3)
        attn = MultiHeadAttention(4, 2, rng, np.float64)
        x = rng.normal(size=(1, 1, 4))
        out = attn.forward(x)
        assert np.allclose(out, x @ attn.Wv @ attn.Wo, atol=1e-12)

    def test_identity_projections_average_identical_tokens(self):
        rng = np.random.default_rng(4)
        attn = MultiHeadAttention(4, 2, rng, np.float64)
        for name in ("Wq", "Wk", "Wv", "Wo"):
            np.copyto(getattr(attn, name), np.eye(4))
        token = rng.normal(size=4)
        x = np.stack([token, token])[None, :, :]
        out = attn.forward(x)
        assert np.allclose(out[0, 0], token, atol=1e-12)
        assert np.allclose(out[0, 1], token, atol=1e-12)

    def test_width_mismatch(self):
        attn = MultiHeadAttention(4, 2, np.random.default_rng(0), np.float64)
        with pytest.raises(ShapeMismatchError):
            attn.forward(np.zeros((1, 3, 6)))


class TestGradientChecks:
    """Analytic gradients against central finite differences, three seeds."""

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_dense(self, seed):
        rng = np.random.default_rng(seed)
        lin = Linear(3, 2, rng, np.float64)
        x = rng.normal(size=(4, 3))
        target = rng.normal(size=(4, 2))

        def f():
            return mse(lin.forward(x), target)

        lin.zero_grad()
        out = lin.forward(x)
        dx = lin.backward(mse_grad(out, target))
        check_param_grads(lin, f, lin.named_grads(), lin.named_params())
        assert rel_error(dx, numeric_grad(f, x)) <= REL_TOL

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_lstm_through_three_steps(self, seed):
        rng = np.random.default_rng(seed)
        lstm = LstmLayer(2, 3, rng, np.float64)
        x = rng.normal(size=(2, 3, 2))
        target = rng.normal(size=(2, 3, 3))

        def f():
            return mse(lstm.forward(x), target)

        lstm.zero_grad()
        out = lstm.forward(x)
        dx = lstm.backward(mse_grad(out, target))
        check_param_grads(lstm, f, lstm.named_grads(), lstm.named_params())
        assert rel_error(dx, numeric_grad(f, x)) <= REL_TOL

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_attention(self, seed):
        rng = np.random.default_rng(seed)
        attn = MultiHeadAttention(4, 2, rng, np.float64)
        x = rng.normal(size=(2, 3, 4))
        target = rng.normal(size=(2, 3, 4))

        def f():
            return mse(attn.forward(x), target)

        attn.zero_grad()
        out = attn.forward(x)
        dq, dkv = attn.backward(mse_grad(out, target))
        check_param_grads(attn, f, attn.named_grads(), attn.named_params())
        assert rel_error(dq + dkv, numeric_grad(f, x)) <= REL_TOL

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_positional_embedding_head(self, seed):
        # input embedding -> positional table -> forecast head
        rng = np.random.default_rng(seed)
        embed = Linear(2, 4, rng, np.float64)
        head = Linear(4, 1, rng, np.float64)
        pe = positional_encoding(3, 4, np.float64)
        x = rng.normal(size=(2, 3, 2))
        target = rng.normal(size=(2, 3, 1))

        def f():
            return mse(head.forward(embed.forward(x) + pe), target)

        embed.zero_grad()
        head.zero_grad()
        out = head.forward(embed.forward(x) + pe)
        d = head.backward(mse_grad(out, target))
        embed.backward(d)
        params = {f"embed.{k}": v for k, v in embed.named_params().items()}
        params |= {f"head.{k}": v for k, v in head.named_params().items()}
        grads = {f"embed.{k}": v for k, v in embed.named_grads().items()}
        grads |= {f"head.{k}": v for k, v in head.named_grads().items()}
        check_param_grads(None, f, grads, params)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_whole_transformer(self, seed):
        # composition check: encoder/decoder stack with the shifted
        # decoder input and cross-attention
        config = ModelConfig(
            kind=ModelKind.TST,
            input_size=2,
            seq_len=3,
            hidden_size=4,
            n_layers=1,
            output_size=1,
            dropout=0.0,
            seed=seed,
            n_heads=2,
            ff_size=6,
        )
        model = build_model(config, np.float64)
        rng = np.random.default_rng(seed + 10)
        x = rng.normal(size=(2, 3, 2))
        target = rng.normal(size=(2, 3, 1))

        def f():
            return mse(model.reconstruct(x), target)

        model.zero_grad()
        out = model.reconstruct(x)
        model.backward(mse_grad(out, target))
        check_param_grads(model, f, model.named_grads(), model.named_params())

    @pytest.mark.parametrize("seed", [0, 1])
    def test_gan_cycle_path(self, seed):
        # encoder -> generator round trip used for reconstruction errors
        config = ModelConfig(
            kind=ModelKind.GAN_LSTM,
            input_size=2,
            seq_len=3,
            hidden_size=3,
            n_layers=1,
            output_size=2,
            dropout=0.0,
            seed=seed,
            noise_size=2,
        )
        model = build_model(config, np.float64)
        rng = np.random.default_rng(seed + 20)
        x = rng.normal(size=(2, 3, 2))

        def f():
            return mse(model.reconstruct(x), x)

        model.zero_grad()
        out = model.reconstruct(x)
        model.backward(mse_grad(out, x))
        grads = {k: v for k, v in model.named_grads().items() if not k.startswith("disc.")}
        params = {k: v for k, v in model.named_params().items() if not k.startswith("disc.")}
        check_param_grads(model, f, grads, params)


class TestDropout:
    def test_inactive_outside_training(self):
        drop = Dropout(0.5)
        x = np.ones((4, 4))
        assert np.array_equal(drop.forward(x, False, np.random.default_rng(0)), x)

    def test_scales_surviving_units(self):
        drop = Dropout(0.5)
        rng = np.random.default_rng(0)
        x = np.ones((1000,))
        out = drop.forward(x, True, rng)
        assert set(np.unique(out)) <= {0.0, 2.0}

    def test_backward_uses_same_mask(self):
        drop = Dropout(0.3)
        rng = np.random.default_rng(1)
        x = np.ones((100,))
        out = drop.forward(x, True, rng)
        grad = drop.backward(np.ones_like(x))
        assert np.array_equal(grad, out)


class TestAttentionForwardOp:
    def test_two_dimensional_surface(self):
        from trackwatch.nn import attention_forward

        rng = np.random.default_rng(9)
        attn = MultiHeadAttention(4, 2, rng, np.float64)
        x = rng.normal(size=(3, 4))
        out = attention_forward(attn, x)
        assert out.shape == (3, 4)
        assert np.allclose(out, attn.forward(x[None])[0])

    def test_rank_mismatch(self):
        from trackwatch.nn import attention_forward

        attn = MultiHeadAttention(4, 2, np.random.default_rng(0), np.float64)
        with pytest.raises(ShapeMismatchError):
            attention_forward(attn, np.zeros((1, 3, 4)))
