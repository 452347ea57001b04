"""Single-file checkpoints: a JSON manifest of (name, shape, offset) entries
followed by a flat little-endian float32 payload."""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np
import torch

MAGIC = b"ATCKPT01"


class CheckpointError(Exception):
    pass


def save_checkpoint(path: "str | Path", tensors: Dict[str, torch.Tensor], meta: Dict[str, Any]) -> None:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = tensors[name].detach().cpu().to(torch.float32).contiguous().numpy()
        data = arr.astype("<f4", copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    manifest = json.dumps({"tensors": entries, "meta": meta}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for chunk in chunks:
            fh.write(chunk)
    tmp.replace(path)


def load_checkpoint(path: "str | Path") -> Tuple[Dict[str, torch.Tensor], Dict[str, Any]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    (size,) = struct.unpack_from("<Q", raw, len(MAGIC))
    start = len(MAGIC) + 8
    try:
        manifest = json.loads(raw[start : start + size].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt manifest in {path}") from exc
    payload = memoryview(raw)[start + size :]
    tensors = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        end = entry["offset"] + 4 * count
        if end > len(payload):
            raise CheckpointError(f"tensor {entry['name']} runs past the end of {path}")
        arr = np.frombuffer(payload[entry["offset"] : end], dtype="<f4").reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(arr.astype(np.float32))
    return tensors, manifest["meta"]
