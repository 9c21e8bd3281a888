"""Feature scaling, outlier filtering, PCA reports, windowing, and splits."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import TrackFrame

SCALER_MAGIC = "twpp1"


class PreprocessError(Exception):
    pass


class EmptyColumnError(PreprocessError):
    pass


class UnknownColumnError(PreprocessError):
    pass


class EmptyInputError(PreprocessError):
    pass


class DegenerateInputError(PreprocessError):
    pass


class TooFewWindowsError(PreprocessError):
    pass


# --- min-max scaling ---------------------------------------------------------


@dataclass(frozen=True)
class ScalerParams:
    """Per-column observed (min, max). Constant columns map to 0.0."""

    bounds: dict[str, tuple[float, float]]

    def to_json(self) -> str:
        return json.dumps(
            {"magic": SCALER_MAGIC, "kind": "minmax", "bounds": self.bounds},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ScalerParams":
        doc = json.loads(text)
        if doc.get("magic") != SCALER_MAGIC or doc.get("kind") != "minmax":
            raise PreprocessError("not a scaler params document")
        return cls({k: (float(lo), float(hi)) for k, (lo, hi) in doc["bounds"].items()})


def fit_minmax(frame: TrackFrame, columns: Sequence[str] | None = None) -> ScalerParams:
    columns = frame.feature_names if columns is None else list(columns)
    if frame.n_rows == 0:
        raise EmptyColumnError("cannot fit a scaler on an empty frame")
    bounds = {}
    for name in columns:
        if name not in frame.columns:
            raise UnknownColumnError(name)
        col = frame.column(name)
        if np.isnan(col).any():
            raise EmptyColumnError(f"column {name!r} has missing values")
        bounds[name] = (float(col.min()), float(col.max()))
    return ScalerParams(bounds)


def apply_minmax(
    frame: TrackFrame, params: ScalerParams, direction: str = "forward"
) -> TrackFrame:
    """Map fitted columns into [0,1] (forward) or back (inverse).

    Inverse is exact on non-constant columns; constant columns scale
    forward to 0.0 and inverse back to their constant.
    """
    if direction not in ("forward", "inverse"):
        raise ValueError(f"direction must be forward|inverse, got {direction!r}")
    missing = [n for n in params.bounds if n not in frame.columns]
    if missing:
        raise UnknownColumnError(f"frame lacks fitted columns {missing}")
    out = {}
    for name, col in frame.columns.items():
        if name not in params.bounds:
            out[name] = col  # not fitted: passes through untouched
            continue
        lo, hi = params.bounds[name]
        span = hi - lo
        if direction == "forward":
            out[name] = np.zeros_like(col) if span == 0 else (col - lo) / span
        else:
            out[name] = np.full_like(col, lo) if span == 0 else col * span + lo
    return frame.with_columns(out)


# --- isolation forest --------------------------------------------------------


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    subsample: int = 256
    contamination: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.subsample < 1:
            raise ValueError("subsample must be positive")
        if not 0.0 <= self.contamination <= 0.5:
            raise ValueError("contamination must be in [0, 0.5]")


@dataclass
class _Node:
    # leaf when feature < 0
    feature: int = -1
    split: float = 0.0
    size: int = 0
    left: "_Node | None" = None
    right: "_Node | None" = None


@dataclass
class IsolationForest:
    trees: list[_Node]
    subsample_size: int


def _harmonic(n: int) -> float:
    return float(np.sum(1.0 / np.arange(1, n + 1))) if n > 0 else 0.0


def average_path_normalizer(n: int) -> float:
    """Expected unsuccessful-search path length c(n); c(1) = 0."""
    if n <= 1:
        return 0.0
    return 2.0 * _harmonic(n - 1) - 2.0 * (n - 1) / n


def _grow(X: np.ndarray, depth: int, max_depth: int, rng: np.random.Generator) -> _Node:
    n = X.shape[0]
    if n <= 1 or depth >= max_depth:
        return _Node(size=n)
    mins, maxs = X.min(axis=0), X.max(axis=0)
    splittable = np.flatnonzero(maxs > mins)
    if splittable.size == 0:
        return _Node(size=n)
    feature = int(rng.choice(splittable))
    split = float(rng.uniform(mins[feature], maxs[feature]))
    mask = X[:, feature] < split
    left, right = X[mask], X[~mask]
    if left.shape[0] == 0 or right.shape[0] == 0:
        return _Node(size=n)
    return _Node(
        feature=feature,
        split=split,
        size=n,
        left=_grow(left, depth + 1, max_depth, rng),
        right=_grow(right, depth + 1, max_depth, rng),
    )


def fit_isolation_forest(X: np.ndarray, config: ForestConfig) -> IsolationForest:
    """Grow randomized isolation trees on uniform subsamples.

    Each split picks a feature uniformly among those with spread at the
    node and a split value uniformly inside the node's [min, max]; depth
    is capped at ceil(log2(subsample)).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise EmptyInputError("cannot fit a forest on empty data")
    rng = np.random.default_rng(config.seed)
    sub = min(config.subsample, X.shape[0])
    max_depth = max(1, math.ceil(math.log2(sub))) if sub > 1 else 0
    trees = []
    for _ in range(config.n_trees):
        idx = rng.choice(X.shape[0], size=sub, replace=False)
        trees.append(_grow(X[idx], 0, max_depth, rng))
    return IsolationForest(trees=trees, subsample_size=sub)


def _path_length(node: _Node, x: np.ndarray, depth: int) -> float:
    while node.feature >= 0:
        node = node.left if x[node.feature] < node.split else node.right  # type: ignore[assignment]
        depth += 1
    return depth + average_path_normalizer(node.size)


def iforest_scores(forest: IsolationForest, X: np.ndarray) -> np.ndarray:
    """Anomaly scores in (0, 1]; higher means easier to isolate."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    denom = average_path_normalizer(forest.subsample_size)
    if denom <= 0.0:
        denom = 1.0
    scores = np.empty(X.shape[0])
    for i, x in enumerate(X):
        mean_depth = sum(_path_length(t, x, 0) for t in forest.trees) / len(forest.trees)
        scores[i] = 2.0 ** (-mean_depth / denom)
    return scores


def filter_outliers(
    frame: TrackFrame, scores: np.ndarray, contamination: float
) -> tuple[TrackFrame, list[int]]:
    """Drop the ceil(contamination*n) highest-scoring rows.

    Score ties at the cut break toward the lowest row index.
    """
    n = frame.n_rows
    if len(scores) != n:
        raise ValueError(f"{len(scores)} scores for {n} rows")
    k = math.ceil(contamination * n)
    if k <= 0:
        return frame, []
    order = np.lexsort((np.arange(n), -np.asarray(scores)))
    removed = sorted(int(i) for i in order[:k])
    keep = np.setdiff1d(np.arange(n), removed)
    return frame.take(keep), removed


# --- PCA ---------------------------------------------------------------------


@dataclass
class PcaResult:
    components: np.ndarray  # [n_features, n_components], orthonormal columns
    explained_ratio: np.ndarray
    n_for_target: int
    top_features: list[list[str]]
    feature_names: list[str]
    mean: np.ndarray
    std: np.ndarray

    def to_json(self) -> str:
        return json.dumps(
            {
                "magic": SCALER_MAGIC,
                "kind": "pca",
                "feature_names": self.feature_names,
                "components": self.components.tolist(),
                "explained_ratio": self.explained_ratio.tolist(),
                "n_for_target": self.n_for_target,
                "top_features": self.top_features,
                "mean": self.mean.tolist(),
                "std": self.std.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "PcaResult":
        doc = json.loads(text)
        if doc.get("magic") != SCALER_MAGIC or doc.get("kind") != "pca":
            raise PreprocessError("not a PCA document")
        return cls(
            components=np.array(doc["components"], dtype=np.float64),
            explained_ratio=np.array(doc["explained_ratio"], dtype=np.float64),
            n_for_target=int(doc["n_for_target"]),
            top_features=[list(t) for t in doc["top_features"]],
            feature_names=list(doc["feature_names"]),
            mean=np.array(doc["mean"], dtype=np.float64),
            std=np.array(doc["std"], dtype=np.float64),
        )


def pca_analyze(
    X: np.ndarray,
    feature_names: Sequence[str] | None = None,
    variance_target: float = 0.95,
) -> PcaResult:
    """Eigendecompose the correlation structure of standardized data.

    Zero-variance columns are dropped with a warning. ``n_for_target`` is
    the smallest component count whose cumulative explained-variance
    ratio reaches the target; each kept component reports its three
    largest-|loading| feature names.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DegenerateInputError("need at least 2 rows")
    names = [f"f{i}" for i in range(X.shape[1])] if feature_names is None else list(feature_names)
    if len(names) != X.shape[1]:
        raise ValueError("feature_names length mismatch")

    mean = X.mean(axis=0)
    std = X.std(axis=0)
    keep = std > 0
    if not keep.all():
        dropped = [names[i] for i in np.flatnonzero(~keep)]
        warnings.warn(f"dropping zero-variance columns: {dropped}")
    X = X[:, keep]
    names = [n for n, k in zip(names, keep) if k]
    if X.shape[1] == 0:
        raise DegenerateInputError("no columns with variance")
    Z = (X - mean[keep]) / std[keep]

    cov = (Z.T @ Z) / Z.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(-eigvals, kind="stable")
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    # deterministic sign: largest-|loading| entry of each component positive
    for j in range(eigvecs.shape[1]):
        pivot = int(np.argmax(np.abs(eigvecs[:, j])))
        if eigvecs[pivot, j] < 0:
            eigvecs[:, j] = -eigvecs[:, j]

    total = eigvals.sum()
    ratio = eigvals / total if total > 0 else np.zeros_like(eigvals)
    cumulative = np.cumsum(ratio)
    n_for_target = int(np.searchsorted(cumulative, variance_target - 1e-12) + 1)
    n_for_target = min(n_for_target, len(ratio))
    top = []
    for j in range(n_for_target):
        idx = np.argsort(-np.abs(eigvecs[:, j]), kind="stable")[:3]
        top.append([names[i] for i in idx])
    return PcaResult(
        components=eigvecs,
        explained_ratio=ratio,
        n_for_target=n_for_target,
        top_features=top,
        feature_names=names,
        mean=mean[keep],
        std=std[keep],
    )


# --- windowing ---------------------------------------------------------------


@dataclass(frozen=True)
class WindowSpec:
    length: int
    stride: int = 1
    horizon: int = 0  # 0 = reconstruction; >0 = forecast offset

    def __post_init__(self) -> None:
        if self.length < 1 or self.stride < 1 or self.horizon < 0:
            raise ValueError(f"bad window spec {self}")


@dataclass
class WindowBatch:
    """Rank-3 float32 batch [window, step, feature] with row provenance."""

    data: np.ndarray
    index_map: list[tuple[int, int]]  # window -> [start, stop) frame rows
    feature_names: list[str]
    timestamps: np.ndarray  # frame timestamps covering the windows
    targets: np.ndarray | None = None

    @property
    def n_windows(self) -> int:
        return int(self.data.shape[0])

    def slice(self, lo: int, hi: int) -> "WindowBatch":
        return WindowBatch(
            data=self.data[lo:hi],
            index_map=self.index_map[lo:hi],
            feature_names=self.feature_names,
            timestamps=self.timestamps,
            targets=None if self.targets is None else self.targets[lo:hi],
        )


def make_windows(
    frame: TrackFrame, spec: WindowSpec, columns: Sequence[str] | None = None
) -> WindowBatch:
    """Slide fixed-length windows over an imputed, scaled frame."""
    names = frame.feature_names if columns is None else list(columns)
    X = frame.values(names)
    if np.isnan(X).any():
        raise PreprocessError("frame has missing values; impute first")
    n = frame.n_rows
    count = (n - spec.length - spec.horizon) // spec.stride + 1
    count = max(count, 0)
    n_feat = len(names)
    data = np.empty((count, spec.length, n_feat), dtype=np.float32)
    targets = (
        np.empty((count, spec.horizon, n_feat), dtype=np.float32) if spec.horizon > 0 else None
    )
    index_map = []
    for w in range(count):
        start = w * spec.stride
        stop = start + spec.length
        data[w] = X[start:stop]
        if targets is not None:
            targets[w] = X[stop : stop + spec.horizon]
        index_map.append((start, stop))
    return WindowBatch(
        data=data,
        index_map=index_map,
        feature_names=names,
        timestamps=frame.timestamps.copy(),
        targets=targets,
    )


def chrono_split(batch: WindowBatch, train_fraction: float) -> tuple[WindowBatch, WindowBatch]:
    """First floor(fraction*n) windows train, the rest test; no shuffling."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    n = batch.n_windows
    if n < 2:
        raise TooFewWindowsError(f"cannot split {n} windows")
    cut = int(math.floor(train_fraction * n))
    return batch.slice(0, cut), batch.slice(cut, n)
