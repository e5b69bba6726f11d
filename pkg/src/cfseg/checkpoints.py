"""Versioned checkpoint archives for the trained networks.

One file carries the format version, the model kind, its hyperparameters
and the parameter blobs. Loading verifies version and kind and fails
loudly on mismatch. The parameter checksum lets evaluation prove that two
inference arms ran the identical segmenter."""

from __future__ import annotations

import hashlib
from pathlib import Path

import torch

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def state_checksum(state_dict: dict) -> str:
    """Order- and layout-stable sha256 over all parameter tensors."""
    h = hashlib.sha256()
    for key in sorted(state_dict):
        t = state_dict[key].detach().cpu().contiguous()
        h.update(key.encode("utf-8"))
        h.update(str(t.dtype).encode("utf-8"))
        h.update(str(tuple(t.shape)).encode("utf-8"))
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def save(path, kind: str, config: dict, state_dict: dict, extra: dict | None = None) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    checksum = state_checksum(state_dict)
    torch.save(
        {
            "format_version": FORMAT_VERSION,
            "kind": kind,
            "config": config,
            "state_dict": state_dict,
            "checksum": checksum,
            "extra": extra or {},
        },
        path,
    )
    return checksum


def load(path, expect_kind: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=False)
    version = blob.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has format version {version}, expected {FORMAT_VERSION}"
        )
    if blob.get("kind") != expect_kind:
        raise CheckpointError(
            f"checkpoint {path} holds a {blob.get('kind')!r} model, expected {expect_kind!r}"
        )
    return blob
