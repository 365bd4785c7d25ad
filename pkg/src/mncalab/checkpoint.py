"""Model checkpoints: a JSON manifest plus a raw little-endian float32 blob.

Layout: 4-byte magic, u32 format version, u64 manifest length, the
manifest JSON, then every parameter tensor back to back in canonical
order (per rule: w1, b1, w2, b2; then selector v1, c1, v2, c2). The
manifest carries the inventory (name, shape, byte offset) so a reader
can locate any tensor without knowing the model code."""

from __future__ import annotations

import json
import struct

import numpy as np

from .model import AutomatonModel
from .rng import RngStream

MAGIC = b"MNCK"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<4sIQ")


class CheckpointError(Exception):
    pass


class ManifestError(CheckpointError):
    """File is not a checkpoint or its manifest does not parse."""


class VersionError(CheckpointError):
    """Checkpoint written by an incompatible format version."""


class BlobLengthError(CheckpointError):
    """Weight blob shorter or longer than the inventory declares."""


class InventoryError(CheckpointError):
    """Declared parameter names/shapes/offsets disagree with the model."""


def _inventory(model: AutomatonModel) -> list[dict]:
    out = []
    offset = 0
    for name, t in model.parameters().items():
        shape = list(t.data.shape)
        out.append({"name": name, "shape": shape, "offset": offset})
        offset += int(np.prod(shape)) * 4
    return out


def build_manifest(model: AutomatonModel, config: dict | None = None,
                   train_steps: int = 0, seed: int | None = None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "model": {
            "variant": model.variant,
            "channels": model.channels,
            "hidden_dim": model.hidden_dim,
            "rules": model.n_rules,
            "residual": model.residual,
            "dropout": model.dropout,
        },
        "config": config,
        "inventory": _inventory(model),
        "train_steps": int(train_steps),
        "seed": seed,
    }


def save_checkpoint(path, model: AutomatonModel, config: dict | None = None,
                    train_steps: int = 0, seed: int | None = None) -> dict:
    """Write model weights and bookkeeping; returns the manifest."""
    manifest = build_manifest(model, config, train_steps, seed)
    blob = b"".join(
        np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        for t in model.parameters().values()
    )
    raw = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(_HEAD.pack(MAGIC, FORMAT_VERSION, len(raw)))
        f.write(raw)
        f.write(blob)
    return manifest


def _read_sections(path) -> tuple[dict, bytes]:
    with open(path, "rb") as f:
        head = f.read(_HEAD.size)
        if len(head) < _HEAD.size:
            raise ManifestError(f"{path}: truncated before the manifest header")
        magic, version, man_len = _HEAD.unpack(head)
        if magic != MAGIC:
            raise ManifestError(f"{path}: not a checkpoint file (bad magic)")
        if version != FORMAT_VERSION:
            raise VersionError(
                f"{path}: written with format {version}, this build reads {FORMAT_VERSION}")
        raw = f.read(man_len)
        blob = f.read()
    if len(raw) < man_len:
        raise ManifestError(f"{path}: manifest shorter than its declared length")
    try:
        manifest = json.loads(raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ManifestError(f"{path}: corrupt manifest: {e}") from e
    for key in ("format_version", "model", "inventory"):
        if key not in manifest:
            raise ManifestError(f"{path}: manifest lacks required key {key!r}")
    return manifest, blob


def read_manifest(path) -> dict:
    """Manifest alone, ignoring the weight blob."""
    manifest, _ = _read_sections(path)
    return manifest


def load_checkpoint(path) -> tuple[AutomatonModel, dict]:
    """Rebuild the model and verify the inventory and blob length."""
    manifest, blob = _read_sections(path)
    spec = manifest["model"]
    try:
        model = AutomatonModel.create(
            spec["variant"], spec["channels"], spec["hidden_dim"],
            n_rules=spec["rules"], residual=spec["residual"],
            dropout=spec.get("dropout", 0.0), rng=RngStream(0),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestError(f"{path}: unusable model description: {e}") from e

    params = model.parameters()
    declared = manifest["inventory"]
    if [d["name"] for d in declared] != list(params):
        raise InventoryError(
            f"{path}: inventory names {[d['name'] for d in declared]} do not match "
            f"the declared model's parameters")
    offset = 0
    for d in declared:
        want = list(params[d["name"]].data.shape)
        if list(d["shape"]) != want:
            raise InventoryError(
                f"{path}: {d['name']} declared shape {d['shape']}, model expects {want}")
        if d["offset"] != offset:
            raise InventoryError(
                f"{path}: {d['name']} declared at offset {d['offset']}, expected {offset}")
        offset += int(np.prod(want)) * 4

    if len(blob) != offset:
        raise BlobLengthError(
            f"{path}: weight blob holds {len(blob)} bytes, inventory declares {offset}")
    for d in declared:
        t = params[d["name"]]
        n = int(np.prod(d["shape"]))
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=d["offset"])
        t.data = arr.reshape(d["shape"]).astype(np.float32, copy=True)
    return model, manifest
