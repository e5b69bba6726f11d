"""File plumbing: PNG image/mask IO, JSONL manifests, hashing, run records."""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SCALE = 65535  # images stored as 16-bit grayscale PNG


def save_image(path, img) -> None:
    """Write a float image in [0, 1] as 16-bit grayscale PNG."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected 2-D image, got shape {arr.shape}")
    q = np.round(np.clip(arr, 0.0, 1.0) * IMAGE_SCALE).astype(np.uint16)
    Image.fromarray(q).save(path)  # uint16 -> 16-bit grayscale PNG


def load_image(path) -> np.ndarray:
    arr = np.asarray(Image.open(path), dtype=np.float64)
    return (arr / IMAGE_SCALE).astype(np.float32)


def save_mask(path, mask) -> None:
    """Write a label mask with raw values {0,1,2} as 8-bit PNG."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"expected 2-D mask, got shape {arr.shape}")
    vals = np.unique(arr)
    if not np.all(np.isin(vals, (0, 1, 2))):
        raise ValueError(f"mask values outside {{0,1,2}}: {vals}")
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path)


def load_mask(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.uint8)


def write_jsonl(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def append_jsonl(path, record) -> None:
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_record(out_dir, command, config, seeds, checksums=None, status="ok",
                     wall_ms=None, outputs=None) -> Path:
    """Provenance record every CLI command drops next to its outputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rec = {
        "command": command,
        "config_hash": config_hash(config),
        "config": config,
        "seeds": seeds,
        "checksums": checksums or {},
        "status": status,
        "wall_ms": wall_ms,
        "outputs": outputs or [],
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    path = out_dir / f"run_{command.replace(' ', '_')}.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(rec, f, indent=2, sort_keys=True)
        f.write("\n")
    return path
