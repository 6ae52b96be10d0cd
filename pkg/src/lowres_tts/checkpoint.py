"""Single-file checkpoint container.

Layout: one JSON header line (format version, model kind, config, training
meta, tensor directory with name/shape/offset) terminated by a newline,
followed by raw little-endian float32 tensor data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1
MODEL_KINDS = ("acoustic", "vocoder")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_kind: str
    config: dict
    tensors: dict  # name -> float32 ndarray
    training_meta: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION


def save_checkpoint(tensors: dict, config: dict, model_kind: str,
                    training_meta: dict, path) -> None:
    if model_kind not in MODEL_KINDS:
        raise CheckpointError(f"unknown model kind {model_kind!r}")
    directory = []
    offset = 0
    blobs = []
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f4")
        directory.append({"name": name, "shape": list(arr.shape),
                          "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "model_kind": model_kind,
        "config": config,
        "training_meta": training_meta,
        "tensors": directory,
        "data_bytes": offset,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8") + b"\n")
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path, expect_kind: str | None = None) -> Checkpoint:
    with open(path, "rb") as f:
        header_line = f.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{path}: corrupt header ({e})") from None
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported format version "
                f"{header.get('format_version')!r} (expected {FORMAT_VERSION})")
        if header.get("model_kind") not in MODEL_KINDS:
            raise CheckpointError(f"{path}: unknown model kind in header")
        data = f.read()
    if len(data) != header["data_bytes"]:
        raise CheckpointError(
            f"{path}: corrupt file, expected {header['data_bytes']} data "
            f"bytes, found {len(data)}")
    if expect_kind is not None and header["model_kind"] != expect_kind:
        raise CheckpointError(
            f"{path}: expected a {expect_kind} checkpoint, "
            f"found {header['model_kind']}")
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=start)
        tensors[entry["name"]] = arr.reshape(shape).copy()
    return Checkpoint(model_kind=header["model_kind"], config=header["config"],
                      tensors=tensors, training_meta=header["training_meta"])


def tensors_from_module(module) -> dict:
    """Extract a torch module's state dict as float32 numpy arrays."""
    return {k: v.detach().cpu().numpy().astype(np.float32)
            for k, v in module.state_dict().items()}


def load_tensors_into_module(module, tensors: dict) -> None:
    import torch

    state = module.state_dict()
    if set(state) != set(tensors):
        missing = set(state) - set(tensors)
        extra = set(tensors) - set(state)
        raise CheckpointError(
            f"tensor names do not match model: missing {sorted(missing)}, "
            f"unexpected {sorted(extra)}")
    for k, v in tensors.items():
        if tuple(state[k].shape) != tuple(v.shape):
            raise CheckpointError(
                f"tensor {k!r} has shape {tuple(v.shape)}, model expects "
                f"{tuple(state[k].shape)}")
    module.load_state_dict(
        {k: torch.from_numpy(np.array(v)) for k, v in tensors.items()})
