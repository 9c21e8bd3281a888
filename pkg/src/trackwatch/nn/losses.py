"""Training criteria with matching gradients."""

from __future__ import annotations

import numpy as np

from .layers import ShapeMismatchError

BCE_CLIP = 1e-7


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"{pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"{pred.shape} vs {target.shape}")
    return (2.0 / pred.size) * (pred - target)


def bce(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"{pred.shape} vs {target.shape}")
    p = np.clip(pred, BCE_CLIP, 1.0 - BCE_CLIP)
    return float(-np.mean(target * np.log(p) + (1.0 - target) * np.log(1.0 - p)))


def bce_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"{pred.shape} vs {target.shape}")
    p = np.clip(pred, BCE_CLIP, 1.0 - BCE_CLIP)
    return (-(target / p) + (1.0 - target) / (1.0 - p)) / pred.size


def loss(kind: str, pred: np.ndarray, target: np.ndarray) -> float:
    if kind == "mse":
        return mse(pred, target)
    if kind == "bce":
        return bce(pred, target)
    raise ValueError(f"unknown loss kind {kind!r}")
