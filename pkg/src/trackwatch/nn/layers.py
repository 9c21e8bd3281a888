"""Layers with explicit reverse-mode backward passes over numpy arrays.

Every layer caches what its backward pass needs during forward and
accumulates parameter gradients into ``d<name>`` arrays. Training runs in
float32; constructing with ``dtype=np.float64`` switches a model into
gradient-check mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ShapeMismatchError(ValueError):
    pass


class OddWidthError(ValueError):
    pass


def sigmoid(x: np.ndarray) -> np.ndarray:
    # numerically stable split form
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def orthogonal(rng: np.random.Generator, n: int, dtype) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return (q * np.sign(np.diag(r))).astype(dtype)


class Layer:
    """Base: parameters live in ``_param_names`` attributes, grads in d-prefixed ones."""

    _param_names: tuple[str, ...] = ()

    def named_params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self._param_names}

    def named_grads(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, "d" + name) for name in self._param_names}

    def zero_grad(self) -> None:
        for name in self._param_names:
            getattr(self, "d" + name).fill(0.0)


class Linear(Layer):
    _param_names = ("W", "b")

    def __init__(self, in_size: int, out_size: int, rng: np.random.Generator, dtype=np.float32):
        self.W = xavier_uniform(rng, in_size, out_size, (in_size, out_size), dtype)
        self.b = np.zeros(out_size, dtype=dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.W.shape[0]:
            raise ShapeMismatchError(f"input width {x.shape[-1]} != {self.W.shape[0]}")
        self._x = x
        return x @ self.W + self.b

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x = self._x
        assert x is not None
        xf = x.reshape(-1, x.shape[-1])
        gf = grad.reshape(-1, grad.shape[-1])
        self.dW += xf.T @ gf
        self.db += gf.sum(axis=0)
        return grad @ self.W.T


class Dropout:
    """Inverted dropout; active only when forward is called with training=True."""

    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {p}")
        self.p = p
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray, training: bool, rng: np.random.Generator) -> np.ndarray:
        if not training or self.p == 0.0:
            self._mask = None
            return x
        self._mask = (rng.random(x.shape) >= self.p).astype(x.dtype) / (1.0 - self.p)
        return x * self._mask

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad if self._mask is None else grad * self._mask


@dataclass
class LstmParams:
    """Per-gate input weights W (input x hidden), recurrent weights U, bias b."""

    W_f: np.ndarray
    U_f: np.ndarray
    b_f: np.ndarray
    W_i: np.ndarray
    U_i: np.ndarray
    b_i: np.ndarray
    W_g: np.ndarray
    U_g: np.ndarray
    b_g: np.ndarray
    W_o: np.ndarray
    U_o: np.ndarray
    b_o: np.ndarray

    @classmethod
    def init(cls, in_size: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        def w():
            return xavier_uniform(rng, in_size, hidden, (in_size, hidden), dtype)

        def u():
            return orthogonal(rng, hidden, dtype)

        def b():
            return np.zeros(hidden, dtype=dtype)

        return cls(w(), u(), b(), w(), u(), b(), w(), u(), b(), w(), u(), b())

    @property
    def hidden(self) -> int:
        return self.b_f.shape[0]

    @property
    def in_size(self) -> int:
        return self.W_f.shape[0]


GATES = ("f", "i", "g", "o")


def lstm_cell_step(
    params: LstmParams, x: np.ndarray, h: np.ndarray, c: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """One gated cell update: forget/input/candidate/output gates."""
    if x.shape != (params.in_size,) or h.shape != (params.hidden,) or c.shape != (params.hidden,):
        raise ShapeMismatchError(
            f"x{x.shape} h{h.shape} c{c.shape} vs in={params.in_size} hidden={params.hidden}"
        )
    f = sigmoid(x @ params.W_f + h @ params.U_f + params.b_f)
    i = sigmoid(x @ params.W_i + h @ params.U_i + params.b_i)
    g = np.tanh(x @ params.W_g + h @ params.U_g + params.b_g)
    o = sigmoid(x @ params.W_o + h @ params.U_o + params.b_o)
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new


class LstmLayer(Layer):
    """Sequence-in, sequence-out LSTM with full backprop through time."""

    _param_names = tuple(f"{kind}_{gate}" for gate in GATES for kind in ("W", "U", "b"))

    def __init__(self, in_size: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.params = LstmParams.init(in_size, hidden, rng, dtype)
        for gate in GATES:
            for kind in ("W", "U", "b"):
                arr = getattr(self.params, f"{kind}_{gate}")
                setattr(self, f"{kind}_{gate}", arr)
                setattr(self, f"d{kind}_{gate}", np.zeros_like(arr))
        self.hidden = hidden
        self.in_size = in_size
        self._cache: dict | None = None

    def _combined(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        W = np.concatenate([getattr(self, f"W_{g}") for g in GATES], axis=1)
        U = np.concatenate([getattr(self, f"U_{g}") for g in GATES], axis=1)
        b = np.concatenate([getattr(self, f"b_{g}") for g in GATES])
        return W, U, b

    def forward(self, X: np.ndarray) -> np.ndarray:
        if X.ndim != 3 or X.shape[-1] != self.in_size:
            raise ShapeMismatchError(f"expected [B, L, {self.in_size}], got {X.shape}")
        B, L, _ = X.shape
        H = self.hidden
        W, U, b = self._combined()
        pre_x = X @ W + b  # [B, L, 4H], input contribution for every step
        h = np.zeros((B, H), dtype=X.dtype)
        c = np.zeros((B, H), dtype=X.dtype)
        hs = np.empty((B, L, H), dtype=X.dtype)
        cache = {
            "X": X,
            "h_prev": np.empty((B, L, H), dtype=X.dtype),
            "c_prev": np.empty((B, L, H), dtype=X.dtype),
            "f": np.empty((B, L, H), dtype=X.dtype),
            "i": np.empty((B, L, H), dtype=X.dtype),
            "g": np.empty((B, L, H), dtype=X.dtype),
            "o": np.empty((B, L, H), dtype=X.dtype),
            "tanh_c": np.empty((B, L, H), dtype=X.dtype),
        }
        for t in range(L):
            pre = pre_x[:, t] + h @ U
            f = sigmoid(pre[:, :H])
            i = sigmoid(pre[:, H : 2 * H])
            g = np.tanh(pre[:, 2 * H : 3 * H])
            o = sigmoid(pre[:, 3 * H :])
            cache["h_prev"][:, t] = h
            cache["c_prev"][:, t] = c
            c = f * c + i * g
            tanh_c = np.tanh(c)
            h = o * tanh_c
            cache["f"][:, t] = f
            cache["i"][:, t] = i
            cache["g"][:, t] = g
            cache["o"][:, t] = o
            cache["tanh_c"][:, t] = tanh_c
            hs[:, t] = h
        self._cache = cache
        return hs

    def backward(self, dH: np.ndarray) -> np.ndarray:
        cache = self._cache
        assert cache is not None
        X = cache["X"]
        B, L, H = dH.shape
        W, U, _ = self._combined()
        dW = np.zeros_like(W)
        dU = np.zeros_like(U)
        db = np.zeros(4 * H, dtype=W.dtype)
        dX = np.empty_like(X)
        dh_next = np.zeros((B, H), dtype=W.dtype)
        dc_next = np.zeros((B, H), dtype=W.dtype)
        for t in reversed(range(L)):
            f, i, g, o = cache["f"][:, t], cache["i"][:, t], cache["g"][:, t], cache["o"][:, t]
            tanh_c = cache["tanh_c"][:, t]
            dh = dH[:, t] + dh_next
            do = dh * tanh_c
            dc = dc_next + dh * o * (1.0 - tanh_c * tanh_c)
            df = dc * cache["c_prev"][:, t]
            di = dc * g
            dg = dc * i
            dc_next = dc * f
            da = np.concatenate(
                [
                    df * f * (1.0 - f),
                    di * i * (1.0 - i),
                    dg * (1.0 - g * g),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            dW += X[:, t].T @ da
            dU += cache["h_prev"][:, t].T @ da
            db += da.sum(axis=0)
            dX[:, t] = da @ W.T
            dh_next = da @ U.T
        for k, gate in enumerate(GATES):
            sl = slice(k * H, (k + 1) * H)
            getattr(self, f"dW_{gate}")[...] += dW[:, sl]
            getattr(self, f"dU_{gate}")[...] += dU[:, sl]
            getattr(self, f"db_{gate}")[...] += db[sl]
        return dX


def positional_encoding(length: int, width: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal position table: sin on even columns, cos on odd."""
    if width % 2 != 0:
        raise OddWidthError(f"width must be even, got {width}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    k = np.arange(width // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * k / width)
    pe = np.empty((length, width), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe.astype(dtype)


class MultiHeadAttention(Layer):
    """Scaled dot-product attention; heads split the model width."""

    _param_names = ("Wq", "Wk", "Wv", "Wo")

    def __init__(self, width: int, n_heads: int, rng: np.random.Generator, dtype=np.float32):
        if width % n_heads != 0:
            raise ShapeMismatchError(f"width {width} not divisible by {n_heads} heads")
        self.width = width
        self.n_heads = n_heads
        self.head = width // n_heads
        for name in self._param_names:
            setattr(self, name, xavier_uniform(rng, width, width, (width, width), dtype))
            setattr(self, "d" + name, np.zeros((width, width), dtype=dtype))
        self._cache: dict | None = None

    def _split(self, x: np.ndarray) -> np.ndarray:
        B, L, _ = x.shape
        return x.reshape(B, L, self.n_heads, self.head).transpose(0, 2, 1, 3)

    def _merge(self, x: np.ndarray) -> np.ndarray:
        B, h, L, d = x.shape
        return x.transpose(0, 2, 1, 3).reshape(B, L, h * d)

    def forward(self, Xq: np.ndarray, Xkv: np.ndarray | None = None) -> np.ndarray:
        if Xq.shape[-1] != self.width:
            raise ShapeMismatchError(f"input width {Xq.shape[-1]} != {self.width}")
        Xkv = Xq if Xkv is None else Xkv
        Q = self._split(Xq @ self.Wq)
        K = self._split(Xkv @ self.Wk)
        V = self._split(Xkv @ self.Wv)
        S = Q @ K.transpose(0, 1, 3, 2) / math.sqrt(self.head)
        S = S - S.max(axis=-1, keepdims=True)
        E = np.exp(S)
        A = E / E.sum(axis=-1, keepdims=True)
        ctx = self._merge(A @ V)
        self._cache = {"Xq": Xq, "Xkv": Xkv, "Q": Q, "K": K, "V": V, "A": A, "ctx": ctx}
        return ctx @ self.Wo

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Returns (dXq, dXkv); callers add them when self-attending."""
        c = self._cache
        assert c is not None
        ctxf = c["ctx"].reshape(-1, self.width)
        gf = grad.reshape(-1, self.width)
        self.dWo += ctxf.T @ gf
        dctx = self._split(grad @ self.Wo.T)
        A, V, Q, K = c["A"], c["V"], c["Q"], c["K"]
        dA = dctx @ V.transpose(0, 1, 3, 2)
        dV = A.transpose(0, 1, 3, 2) @ dctx
        dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True))
        dS /= math.sqrt(self.head)
        dQ = dS @ K
        dK = dS.transpose(0, 1, 3, 2) @ Q
        dQm, dKm, dVm = self._merge(dQ), self._merge(dK), self._merge(dV)
        Xqf = c["Xq"].reshape(-1, self.width)
        Xkvf = c["Xkv"].reshape(-1, self.width)
        self.dWq += Xqf.T @ dQm.reshape(-1, self.width)
        self.dWk += Xkvf.T @ dKm.reshape(-1, self.width)
        self.dWv += Xkvf.T @ dVm.reshape(-1, self.width)
        dXq = dQm @ self.Wq.T
        dXkv = dKm @ self.Wk.T + dVm @ self.Wv.T
        return dXq, dXkv


def attention_forward(attention: MultiHeadAttention, X: np.ndarray) -> np.ndarray:
    """Self-attention over a single [length, width] sequence."""
    if X.ndim != 2:
        raise ShapeMismatchError(f"expected [L, d], got {X.shape}")
    return attention.forward(X[None])[0]


class FeedForward(Layer):
    """Position-wise two-layer ReLU block."""

    _param_names = ("W1", "b1", "W2", "b2")

    def __init__(self, width: int, inner: int, rng: np.random.Generator, dtype=np.float32):
        self.W1 = xavier_uniform(rng, width, inner, (width, inner), dtype)
        self.b1 = np.zeros(inner, dtype=dtype)
        self.W2 = xavier_uniform(rng, inner, width, (inner, width), dtype)
        self.b2 = np.zeros(width, dtype=dtype)
        for name in self._param_names:
            setattr(self, "d" + name, np.zeros_like(getattr(self, name)))
        self._cache: tuple | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        a = x @ self.W1 + self.b1
        r = np.maximum(a, 0.0)
        self._cache = (x, a, r)
        return r @ self.W2 + self.b2

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x, a, r = self._cache  # type: ignore[misc]
        rf = r.reshape(-1, r.shape[-1])
        gf = grad.reshape(-1, grad.shape[-1])
        self.dW2 += rf.T @ gf
        self.db2 += gf.sum(axis=0)
        dr = grad @ self.W2.T
        da = dr * (a > 0.0)
        xf = x.reshape(-1, x.shape[-1])
        daf = da.reshape(-1, da.shape[-1])
        self.dW1 += xf.T @ daf
        self.db1 += daf.sum(axis=0)
        return da @ self.W1.T
