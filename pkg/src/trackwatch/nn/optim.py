"""Adaptive-moment optimizer with decoupled weight decay and norm clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np


@dataclass(frozen=True)
class OptimHyper:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_grad_norm: float = 1.0
    epochs: int = 50
    batch_size: int = 32

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie strictly in (0, 1)")
        if self.max_grad_norm <= 0:
            raise ValueError("max_grad_norm must be positive")


def clip_gradients(grads: Mapping[str, np.ndarray], max_norm: float) -> Mapping[str, np.ndarray]:
    """Scale all gradients in place when their global L2 norm exceeds max_norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return grads


def adam_step(
    state: tuple[np.ndarray, np.ndarray],
    param: np.ndarray,
    grad: np.ndarray,
    hyper: OptimHyper,
    t: int,
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """One functional update for a single tensor.

    Decoupled weight decay shrinks the parameter before the moment
    update; bias correction uses the step count t (>= 1).
    """
    if param.shape != grad.shape:
        raise ValueError(f"param {param.shape} vs grad {grad.shape}")
    if t < 1:
        raise ValueError("t must be >= 1")
    m, v = state
    theta = param * (1.0 - hyper.lr * hyper.weight_decay)
    m = hyper.beta1 * m + (1.0 - hyper.beta1) * grad
    v = hyper.beta2 * v + (1.0 - hyper.beta2) * grad * grad
    m_hat = m / (1.0 - hyper.beta1**t)
    v_hat = v / (1.0 - hyper.beta2**t)
    theta = theta - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return theta, (m, v)


class Adam:
    """In-place optimizer over a named parameter store."""

    def __init__(self, params: Mapping[str, np.ndarray], hyper: OptimHyper):
        self.params = dict(params)
        self.hyper = hyper
        self.m = {k: np.zeros_like(p) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p) for k, p in self.params.items()}
        self.t = 0

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        h = self.hyper
        bc1 = 1.0 - h.beta1**self.t
        bc2 = 1.0 - h.beta2**self.t
        for name, p in self.params.items():
            g = grads[name]
            p *= 1.0 - h.lr * h.weight_decay
            m, v = self.m[name], self.v[name]
            m *= h.beta1
            m += (1.0 - h.beta1) * g
            v *= h.beta2
            v += (1.0 - h.beta2) * g * g
            p -= h.lr * (m / bc1) / (np.sqrt(v / bc2) + h.eps)
