"""Bit-exact model checkpoints as versioned JSON documents."""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .models import ModelConfig, ModelKind, TrainedModel, build_model

CHECKPOINT_MAGIC = "twnn1"

_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(Exception):
    pass


def _config_to_doc(config: ModelConfig) -> dict:
    return {
        "kind": config.kind.value,
        "input_size": config.input_size,
        "seq_len": config.seq_len,
        "hidden_size": config.hidden_size,
        "n_layers": config.n_layers,
        "output_size": config.output_size,
        "dropout": config.dropout,
        "seed": config.seed,
        "n_heads": config.n_heads,
        "ff_size": config.ff_size,
        "noise_size": config.noise_size,
        "target_indices": list(config.target_indices) if config.target_indices else None,
    }


def config_from_doc(doc: dict) -> ModelConfig:
    return ModelConfig(
        kind=ModelKind(doc["kind"]),
        input_size=doc["input_size"],
        seq_len=doc["seq_len"],
        hidden_size=doc["hidden_size"],
        n_layers=doc["n_layers"],
        output_size=doc["output_size"],
        dropout=doc["dropout"],
        seed=doc["seed"],
        n_heads=doc["n_heads"],
        ff_size=doc.get("ff_size"),
        noise_size=doc.get("noise_size"),
        target_indices=tuple(doc["target_indices"]) if doc.get("target_indices") else None,
    )


def checkpoint_to_json(trained: TrainedModel) -> str:
    params = {}
    for name, arr in trained.named_params().items():
        if arr.dtype.name not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        payload = np.ascontiguousarray(arr, dtype=_DTYPES[arr.dtype.name])
        params[name] = {
            "shape": list(arr.shape),
            "dtype": arr.dtype.name,
            "data": base64.b64encode(payload.tobytes()).decode("ascii"),
        }
    return json.dumps(
        {
            "magic": CHECKPOINT_MAGIC,
            "config": _config_to_doc(trained.config),
            "history": trained.history,
            "params": params,
        }
    )


def checkpoint_from_json(text: str) -> TrainedModel:
    doc = json.loads(text)
    if doc.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError("not a model checkpoint document")
    config = config_from_doc(doc["config"])
    model = build_model(config)
    live = model.named_params()
    if set(live) != set(doc["params"]):
        raise CheckpointError("parameter names do not match the configured architecture")
    for name, entry in doc["params"].items():
        raw = base64.b64decode(entry["data"])
        arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"])
        target = live[name]
        if tuple(arr.shape) != target.shape:
            raise CheckpointError(f"shape mismatch for {name}")
        np.copyto(target, arr.astype(target.dtype))
    history = [tuple(pair) for pair in doc.get("history", [])]
    return TrainedModel(config=config, model=model, history=history)


def save_checkpoint(trained: TrainedModel, path: str | Path) -> None:
    Path(path).write_text(checkpoint_to_json(trained))


def load_checkpoint(path: str | Path) -> TrainedModel:
    return checkpoint_from_json(Path(path).read_text())
