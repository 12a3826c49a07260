"""Checkpoints: one ``.npz`` holding parameters, ADAM moments and a JSON
metadata record (format version, config, shapes, optimizer scalars, RNG
states, history)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError
from ..optim import Adam
from .config import NetConfig
from .models import FCNet, build_model

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: FCNet
    optimizer: Adam | None
    meta: dict = field(default_factory=dict)

    @property
    def config(self) -> NetConfig:
        return self.model.cfg


def save_checkpoint(path, model: FCNet, optimizer: Adam | None = None, **meta) -> None:
    """Write ``model`` (and optionally ``optimizer``); extra keyword values
    must be JSON-serializable and are stored verbatim."""
    arrays = {}
    for name, p in model.named_parameters():
        arrays[f"param/{name}"] = p.value
    record = {
        "version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "in_channels": int(model.lift.f1.value.shape[0]),
        "n_out": int(model.n_out),
        **meta,
    }
    if optimizer is not None:
        state = optimizer.state_dict()
        for k in optimizer.params:
            arrays[f"adam_m/{k}"] = state["m"][k]
            arrays[f"adam_v/{k}"] = state["v"][k]
        record["optimizer"] = {k: state[k] for k in ("step", "lr", "beta1", "beta2", "eps")}
    arrays["meta"] = np.frombuffer(json.dumps(record, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, epsilon: float | None = None) -> Checkpoint:
    """Restore a checkpoint. When ``epsilon`` is given it must equal the
    support radius the model was trained with."""
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    if "meta" not in arrays:
        raise DataError(f"{path}: not a checkpoint (no metadata)")
    meta = json.loads(arrays.pop("meta").tobytes().decode())
    if meta.get("version") != FORMAT_VERSION:
        raise ConfigError(f"{path}: checkpoint version {meta.get('version')} is not supported")
    cfg = NetConfig.from_dict(meta["config"])
    if epsilon is not None and not math.isclose(cfg.epsilon, epsilon, rel_tol=0, abs_tol=1e-12):
        raise ConfigError(f"checkpoint was trained with epsilon {cfg.epsilon}, cache has {epsilon}")
    model = build_model(cfg, meta["in_channels"], meta["n_out"])
    params = model.parameters()
    for name, p in params.items():
        key = f"param/{name}"
        if key not in arrays or arrays[key].shape != p.value.shape:
            raise ConfigError(f"{path}: parameter {name} missing or mis-shaped")
        p.value[...] = arrays[key]
    optimizer = None
    if "optimizer" in meta:
        o = meta["optimizer"]
        optimizer = Adam(params, lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"])
        optimizer.load_state_dict({
            **o,
            "m": {k: arrays[f"adam_m/{k}"] for k in params},
            "v": {k: arrays[f"adam_v/{k}"] for k in params},
        })
    return Checkpoint(model, optimizer, meta)
