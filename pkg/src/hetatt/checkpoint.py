"""Binary checkpoint format.

Layout: the 8-byte magic ``HETF0001``, one line of UTF-8 JSON (the manifest:
config, vocabulary, step counter, and the ordered tensor table with byte
offsets), then a raw little-endian float32 blob.  The newline terminating
the manifest is the delimiter between JSON and blob.  Saving is canonical
(sorted keys, fixed separators, fixed tensor order), so save / load / save
round-trips to identical bytes.
"""

from __future__ import annotations

import json

import numpy as np

from .corpus import Vocab
from .model import ModelConfig, ModelState, param_specs

MAGIC = b"HETF0001"


class CheckpointError(ValueError):
    pass


def save_checkpoint(state: ModelState, cfg: ModelConfig, vocab: Vocab, path) -> None:
    """Write the model to ``path``.  Tensors are downcast to float32 (lossy
    for float64 states; documented)."""
    specs = param_specs(cfg)
    blobs = []
    table = []
    offset = 0
    for name, shape, _ in specs:
        arr = state.params[name]
        if tuple(arr.shape) != tuple(shape):
            raise CheckpointError(f"tensor {name} has shape {arr.shape}, expected {shape}")
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table.append({"name": name, "shape": list(shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "config": cfg.to_dict(),
        "step": state.step,
        "tensors": table,
        "vocab": vocab.tokens,
    }
    payload = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(payload)
        fh.write(b"\n")
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path):
    """Read a checkpoint back as (state, config, vocab).

    Tensors are validated against the shapes the stored config implies and
    cast to the config dtype.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8 or data[:4] != MAGIC[:4]:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if data[:8] != MAGIC:
        raise CheckpointError(
            f"{path}: version mismatch (found {data[4:8].decode('ascii', 'replace')!r}, "
            f"expected {MAGIC[4:].decode('ascii')!r})")
    nl = data.find(b"\n", 8)
    if nl < 0:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[8:nl].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: bad manifest ({e})") from None
    for key in ("config", "step", "tensors", "vocab"):
        if key not in manifest:
            raise CheckpointError(f"{path}: manifest lacks {key!r}")
    try:
        cfg = ModelConfig(**manifest["config"])
    except (TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: bad config in manifest ({e})") from None
    vocab = Vocab(manifest["vocab"])
    if len(vocab) != cfg.vocab_size:
        raise CheckpointError(
            f"{path}: vocabulary has {len(vocab)} entries, config says {cfg.vocab_size}")

    specs = param_specs(cfg)
    table = manifest["tensors"]
    if [t["name"] for t in table] != [name for name, _, _ in specs]:
        raise CheckpointError(f"{path}: tensor table does not match the config layout")
    blob = data[nl + 1:]
    params = {}
    for (name, shape, _), entry in zip(specs, table):
        if tuple(entry["shape"]) != tuple(shape):
            raise CheckpointError(
                f"{path}: shape mismatch for {name}: manifest {entry['shape']}, "
                f"config implies {list(shape)}")
        count = int(np.prod(shape))
        start = entry["offset"]
        end = start + 4 * count
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated blob (tensor {name})")
        arr = np.frombuffer(blob[start:end], dtype="<f4").reshape(shape)
        params[name] = arr.astype(cfg.np_dtype)
    state = ModelState(params=params, step=int(manifest["step"]))
    return state, cfg, vocab
