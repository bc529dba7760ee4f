"""Versioned binary checkpoint container.

Byte layout (little-endian):

    offset  size  field
    0       8     magic ``FUSECKPT``
    8       4     u32 format version (currently 1)
    12      8     u64 header length H in bytes
    20      H     UTF-8 JSON header
    20+H    ...   tensor payload, float64 little-endian

The JSON header holds the model config, an ordered tensor index
(name, shape, offset in elements), optimizer hyperparameters and step
count, and a free-form ``meta`` dict. The payload is the concatenation
of all parameter tensors in index order, followed by the optimizer's
first-moment tensors and then its second-moment tensors in the same
order (both optional; presence flagged in the header).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import nn_core
from .fusion_model import ModelConfig, ModelParams, init_model

CHECKPOINT_MAGIC = b"FUSECKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Raised when a checkpoint file is malformed or version-incompatible."""


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    optimizer: nn_core.OptimizerState | None = None
    meta: dict | None = None


def _tensor_index(tensors: dict[str, np.ndarray]) -> list[dict]:
    index = []
    offset = 0
    for name, arr in tensors.items():
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += int(arr.size)
    return index


def _flatten(tensors: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(tensors[k], dtype="<f8").ravel() for k in tensors])


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    tensors = ckpt.params.tensors()
    header = {
        "model_config": ckpt.config.to_dict(),
        "tensors": _tensor_index(tensors),
        "meta": ckpt.meta or {},
        "optimizer": None,
    }
    blobs = [_flatten(tensors)]
    opt = ckpt.optimizer
    if opt is not None:
        if set(opt.m) != set(tensors) or set(opt.v) != set(tensors):
            raise CheckpointError("optimizer moment names do not match parameter names")
        header["optimizer"] = {
            "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
            "eps": opt.eps, "weight_decay": opt.weight_decay, "step": opt.step,
        }
        blobs.append(_flatten({k: opt.m[k] for k in tensors}))
        blobs.append(_flatten({k: opt.v[k] for k in tensors}))

    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.uint32(CHECKPOINT_VERSION).tobytes())
        fh.write(np.uint64(len(header_bytes)).tobytes())
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob.tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 20 or raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header_len = int(np.frombuffer(raw[12:20], dtype="<u8")[0])
    try:
        header = json.loads(raw[20 : 20 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc

    config = ModelConfig(**header["model_config"])
    params = init_model(config)
    tensors = params.tensors()
    index = header["tensors"]
    if [e["name"] for e in index] != list(tensors):
        raise CheckpointError(f"{path}: tensor index does not match the model config")

    n_params = sum(int(np.prod(e["shape"])) for e in index)
    payload = np.frombuffer(raw[20 + header_len :], dtype="<f8")
    n_blocks = 3 if header.get("optimizer") else 1
    if payload.size != n_blocks * n_params:
        raise CheckpointError(
            f"{path}: payload holds {payload.size} values, expected {n_blocks * n_params}")

    def read_block(block: int) -> dict[str, np.ndarray]:
        out = {}
        base = block * n_params
        for entry in index:
            size = int(np.prod(entry["shape"]))
            start = base + entry["offset"]
            out[entry["name"]] = payload[start : start + size].reshape(entry["shape"]).copy()
        return out

    for name, arr in read_block(0).items():
        if tensors[name].shape != arr.shape:
            raise CheckpointError(f"{path}: shape mismatch for tensor {name}")
        tensors[name][...] = arr

    optimizer = None
    if header.get("optimizer"):
        o = header["optimizer"]
        optimizer = nn_core.OptimizerState(
            lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"],
            weight_decay=o["weight_decay"], step=int(o["step"]),
            m=read_block(1), v=read_block(2),
        )
    return Checkpoint(config=config, params=params, optimizer=optimizer,
                      meta=header.get("meta") or {})
