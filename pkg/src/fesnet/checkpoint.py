"""Checkpoint serialization: a JSON header line followed by raw
little-endian float32 payloads, one per named tensor, in manifest order.
The format is bit-exact: save -> load reproduces forward outputs bitwise
for float32 models.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import ArchConfig, FesNet

MAGIC = "fesnet-checkpoint"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _tensor_entries(model: FesNet, optimizer=None):
    entries = [(name, p.value, "param") for name, p in model.named_params()]
    entries += [(name, arr, "buffer") for name, arr in model.buffers()]
    if optimizer is not None:
        for p, s in zip(optimizer.params, optimizer.states):
            entries.append((f"{p.name}.adam_m", s.m, "opt"))
            entries.append((f"{p.name}.adam_v", s.v, "opt"))
    return entries


def save_checkpoint(model: FesNet, path, meta: dict | None = None, optimizer=None) -> Path:
    """Write the model (and optionally ADAM moments) to ``path``."""
    path = Path(path)
    entries = _tensor_entries(model, optimizer)
    header = {
        "magic": MAGIC,
        "version": VERSION,
        "arch": model.arch.to_dict(),
        "meta": dict(meta or {}),
        "tensors": [[name, list(arr.shape), kind] for name, arr, kind in entries],
    }
    if optimizer is not None:
        header["meta"]["adam_t"] = [s.t for s in optimizer.states]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for _, arr, _ in entries:
            f.write(np.ascontiguousarray(arr).astype("<f4", copy=False).tobytes())
    return path


def _read_header(f, path):
    line = f.readline()
    if not line:
        raise CheckpointError(f"{path}: empty file, not a checkpoint")
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header, not a checkpoint ({exc})") from exc
    if header.get("magic") != MAGIC:
        raise CheckpointError(f"{path}: header magic {header.get('magic')!r} is not {MAGIC!r}")
    if header.get("version") != VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('version')} is unsupported (expected {VERSION})"
        )
    return header


def load_checkpoint(path, model: FesNet | None = None):
    """Load a checkpoint; returns ``(model, meta)``.

    When ``model`` is given its architecture must match the stored tensors;
    the first mismatched tensor is named in the error. Otherwise a fresh
    model is built from the stored architecture.
    """
    path = Path(path)
    with open(path, "rb") as f:
        header = _read_header(f, path)
        payload = f.read()

    arch = ArchConfig.from_dict(header["arch"])
    if model is None:
        model = FesNet(arch)
    targets = {name: p.value for name, p in model.named_params()}
    targets.update({name: arr for name, arr in model.buffers()})

    expected = sum(4 * int(np.prod(shape)) for _, shape, _ in header["tensors"])
    if len(payload) < expected:
        raise CheckpointError(
            f"{path}: truncated payload, got {len(payload)} bytes, manifest needs {expected}"
        )
    if len(payload) > expected:
        raise CheckpointError(
            f"{path}: payload has {len(payload) - expected} trailing bytes beyond the manifest"
        )

    offset = 0
    for name, shape, kind in header["tensors"]:
        n = int(np.prod(shape))
        chunk = np.frombuffer(payload, dtype="<f4", count=n, offset=offset).reshape(shape)
        offset += 4 * n
        if kind == "opt":
            continue
        if name not in targets:
            raise CheckpointError(f"{path}: tensor {name!r} does not exist in the target model")
        dst = targets[name]
        if tuple(dst.shape) != tuple(shape):
            raise CheckpointError(
                f"{path}: tensor {name!r} has shape {tuple(shape)}, "
                f"model expects {tuple(dst.shape)}"
            )
        dst[...] = chunk
    return model, header.get("meta", {})


def read_meta(path) -> dict:
    with open(Path(path), "rb") as f:
        header = _read_header(f, path)
    return header.get("meta", {})
