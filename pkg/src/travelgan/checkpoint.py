"""Binary checkpoint format.

Layout (little-endian)::

    b"TRVL" | u32 format version | u32 manifest length | manifest (UTF-8 JSON)
    | float32 blocks, concatenated in manifest order

The manifest records the step, the training config, every stored array
(name, byte offset into the block section, shape, dtype), the sampler seed,
Adam scalars and the recent loss history. JSON is written with sorted keys
and fixed separators so a reload/re-save round trip is byte-identical.
"""

from __future__ import annotations

import json
import os
import struct
from collections import deque
from pathlib import Path

import numpy as np

from .networks import ConfigError
from .trainer import HISTORY, TrainingConfig, TrainState, init_state

MAGIC = b"TRVL"
VERSION = 1
_HEADER = struct.Struct("<4sII")


class CheckpointError(ValueError):
    """Malformed, truncated or incompatible checkpoint."""


def _arrays(state: TrainState):
    out = {}
    for net_name, net in state.nets.items():
        for k, v in net.params.items():
            out[f"net/{net_name}/param/{k}"] = v
        for layer, rs in net.buffers.items():
            out[f"net/{net_name}/running/{layer}/mean"] = rs.mean
            out[f"net/{net_name}/running/{layer}/var"] = rs.var
        adam = state.adam[net_name]
        for k in net.params:
            out[f"adam/{net_name}/m/{k}"] = adam.m[k]
            out[f"adam/{net_name}/v/{k}"] = adam.v[k]
    return {k: out[k] for k in sorted(out)}


def _threads():
    return {k: os.environ.get(k) for k in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")}


def checkpoint_bytes(state: TrainState) -> bytes:
    arrays = _arrays(state)
    entries, blocks, offset = [], [], 0
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "offset": offset, "shape": list(arr.shape), "dtype": "float32"})
        blocks.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": VERSION,
        "step": state.step,
        "config": state.config.to_dict(),
        "tensors": entries,
        "rng": {"scheme": "epoch_permutation", "seed": state.config.seed, "step": state.step},
        "adam": {n: {"step": a.step, "lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps}
                 for n, a in sorted(state.adam.items())},
        "history": list(state.history),
        "threads": _threads(),
    }
    body = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(MAGIC, VERSION, len(body)) + body + b"".join(blocks)


def save_checkpoint(state: TrainState, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(state))
    tmp.replace(path)
    return path


def read_manifest(blob: bytes):
    if len(blob) < _HEADER.size:
        raise CheckpointError("checkpoint truncated: header incomplete")
    magic, version, mlen = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    end = _HEADER.size + mlen
    if len(blob) < end:
        raise CheckpointError("checkpoint truncated: manifest incomplete")
    try:
        manifest = json.loads(blob[_HEADER.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint manifest: {exc}") from exc
    return manifest, end


def load_checkpoint(path, expected_config: TrainingConfig | None = None) -> TrainState:
    """Rebuild a TrainState. With ``expected_config`` the architecture must match."""
    blob = Path(path).read_bytes()
    manifest, data_start = read_manifest(blob)
    try:
        config = TrainingConfig.from_dict(manifest["config"])
    except (KeyError, TypeError, ConfigError, ValueError) as exc:
        raise CheckpointError(f"checkpoint config unreadable: {exc}") from exc
    if expected_config is not None and expected_config.arch != config.arch:
        raise CheckpointError(f"checkpoint architecture {config.arch.to_dict()} does not match "
                              f"expected {expected_config.arch.to_dict()}")
    if expected_config is not None and (expected_config.directions, expected_config.siamese_sharing) != \
            (config.directions, config.siamese_sharing):
        raise CheckpointError("checkpoint network layout (directions / siamese sharing) does not match run")

    state = init_state(config)
    targets = _arrays(state)
    stored = {e["name"]: e for e in manifest["tensors"]}
    if set(stored) != set(targets):
        missing = sorted(set(targets) - set(stored))[:3]
        extra = sorted(set(stored) - set(targets))[:3]
        raise CheckpointError(f"checkpoint tensors do not match config (missing {missing}, unexpected {extra})")
    for name, target in targets.items():
        e = stored[name]
        if tuple(e["shape"]) != target.shape:
            raise CheckpointError(f"shape mismatch for {name}: stored {tuple(e['shape'])}, expected {target.shape}")
        start = data_start + e["offset"]
        nbytes = 4 * int(np.prod(e["shape"], dtype=np.int64))
        if start + nbytes > len(blob):
            raise CheckpointError(f"checkpoint truncated inside tensor {name}")
        target[...] = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=start).reshape(target.shape)

    for name, a in manifest["adam"].items():
        st = state.adam[name]
        st.step, st.lr, st.beta1, st.beta2, st.eps = a["step"], a["lr"], a["beta1"], a["beta2"], a["eps"]
    state.step = int(manifest["step"])
    state.history = deque(manifest["history"], maxlen=HISTORY)
    return state
