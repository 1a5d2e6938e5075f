"""Model checkpoints built on the shared container format.

A checkpoint round-trips the network parameters and the optimizer moments
bit for bit (everything is float32 on both sides), plus the full run
configuration so evaluation can rebuild the network and reproduce the
train/test class split.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .autodiff import AdamState, Tensor
from .config import TrainConfig
from .container import load_container, save_container
from .errors import FormatError, ModelKindMismatchError
from .network import QNetwork


def save_checkpoint(
    path: str | Path,
    model: QNetwork,
    adam: AdamState | None,
    config: TrainConfig,
) -> None:
    arrays: dict[str, np.ndarray] = {
        f"param/{name}": p.data for name, p in sorted(model.params.items())
    }
    meta = {
        "model_kind": model.kind,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
    }
    if adam is not None:
        meta["adam"] = {"step_count": adam.step_count, "learning_rate": adam.learning_rate}
        for name in sorted(adam.m):
            arrays[f"adam_m/{name}"] = adam.m[name]
            arrays[f"adam_v/{name}"] = adam.v[name]
    save_container(path, "checkpoint", meta, arrays)


def load_checkpoint(
    path: str | Path, expect_kind: str | None = None
) -> tuple[QNetwork, AdamState | None, TrainConfig]:
    kind, meta, arrays = load_container(path)
    if kind != "checkpoint":
        raise FormatError(f"{path} is a {kind!r} container, not a checkpoint")
    model_kind = meta.get("model_kind")
    if expect_kind is not None and model_kind != expect_kind:
        raise ModelKindMismatchError(
            f"{path} holds a {model_kind!r} model, expected {expect_kind!r}"
        )
    try:
        config = TrainConfig.from_dict(meta["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: invalid config header: {exc}") from exc

    model = build_network(config)
    for name, p in model.params.items():
        stored = arrays.get(f"param/{name}")
        if stored is None:
            raise FormatError(f"{path}: missing parameter '{name}'")
        if stored.shape != p.data.shape:
            raise FormatError(
                f"{path}: parameter '{name}' has shape {stored.shape}, expected {p.data.shape}"
            )
        model.params[name] = Tensor(stored.astype(np.float32), requires_grad=True)

    adam = None
    if "adam" in meta:
        adam = AdamState(
            learning_rate=float(meta["adam"]["learning_rate"]),
            step_count=int(meta["adam"]["step_count"]),
        )
        for name in model.params:
            m = arrays.get(f"adam_m/{name}")
            v = arrays.get(f"adam_v/{name}")
            if m is not None:
                adam.m[name] = m.astype(np.float32)
            if v is not None:
                adam.v[name] = v.astype(np.float32)
    return model, adam, config


def build_network(config: TrainConfig, rng: np.random.Generator | None = None) -> QNetwork:
    return QNetwork(
        kind=config.model_kind,
        num_classes=config.num_classes,
        hidden_size=config.hidden_size,
        memory_slots=config.memory_slots,
        memory_width=config.memory_width,
        usage_decay=config.usage_decay,
        rng=rng,
    )
