"""Checkpoint file: b"LAE1", uint32 header length, JSON header, float32 LE payload."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .models import L2SModel, ModelConfig, S2LModel

MAGIC = b"LAE1"


class CheckpointError(ValueError):
    pass


def dumps(config: ModelConfig, s2l: S2LModel | None = None, l2s: L2SModel | None = None,
          meta: dict | None = None) -> bytes:
    params = []
    chunks = []
    offset = 0
    for prefix, model in (("s2l", s2l), ("l2s", l2s)):
        if model is None:
            continue
        for name, t in model.state_dict().items():
            raw = t.detach().cpu().numpy().astype("<f4").tobytes()
            params.append({"name": f"{prefix}.{name}", "shape": list(t.shape),
                           "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
    header = json.dumps(
        {"config": config.to_dict(), "meta": meta or {}, "params": params},
        sort_keys=True, separators=(",", ":"),
    ).encode()
    return MAGIC + struct.pack("<I", len(header)) + header + b"".join(chunks)


def save(path, config, s2l=None, l2s=None, meta=None) -> None:
    Path(path).write_bytes(dumps(config, s2l, l2s, meta))


def loads(data: bytes, dtype=torch.float32):
    """Return (config, s2l or None, l2s or None, meta)."""
    if data[:4] != MAGIC:
        raise CheckpointError("not a Lead-AE checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", data[4:8])
    try:
        header = json.loads(data[8:8 + hlen])
        config = ModelConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from None
    payload = memoryview(data)[8 + hlen:]
    states: dict[str, dict] = {"s2l": {}, "l2s": {}}
    for p in header["params"]:
        prefix, name = p["name"].split(".", 1)
        if p["offset"] + p["nbytes"] > len(payload):
            raise CheckpointError(f"parameter {p['name']} runs past the end of the file")
        arr = np.frombuffer(payload[p["offset"]:p["offset"] + p["nbytes"]], dtype="<f4")
        states[prefix][name] = torch.from_numpy(arr.reshape(p["shape"]).copy()).to(dtype)
    models = []
    for prefix, cls in (("s2l", S2LModel), ("l2s", L2SModel)):
        if not states[prefix]:
            models.append(None)
            continue
        model = cls(config).to(dtype)
        expected = model.state_dict()
        for name, t in expected.items():
            if name not in states[prefix]:
                raise CheckpointError(f"missing parameter {prefix}.{name}")
            if tuple(states[prefix][name].shape) != tuple(t.shape):
                raise CheckpointError(
                    f"{prefix}.{name}: shape {tuple(states[prefix][name].shape)} "
                    f"does not match config shape {tuple(t.shape)}"
                )
        extra = set(states[prefix]) - set(expected)
        if extra:
            raise CheckpointError(f"unexpected parameters: {sorted(extra)}")
        model.load_state_dict(states[prefix])
        models.append(model)
    return config, models[0], models[1], header.get("meta", {})


def load(path, dtype=torch.float32):
    return loads(Path(path).read_bytes(), dtype)
