"""Encoder-decoder segmentation network trained on silver-standard masks.

The trainer reads the silver channel only; ground-truth masks are reserved
for evaluation and any attempt to point training at them is rejected. The
same frozen checkpoint serves both the direct arm and the counterfactual
arm, verified through its parameter checksum."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import checkpoints, io_utils, metrics
from .synth_scm import load_manifest

NUM_CLASSES = 3


@dataclass
class SegTrainConfig:
    depth: int = 4
    base_channels: int = 16
    epochs: int = 12
    batch_size: int = 32
    lr: float = 1e-3
    ce_weight: float = 0.5
    dice_weight: float = 0.5
    seed: int = 0
    mask_source: str = "silver_mask_path"
    augment_intensity: bool = False
    augment_shift: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.ce_weight < 0 or self.dice_weight < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if "gt" in self.mask_source:
            raise ValueError(
                "segmentation training must use silver masks; "
                f"mask_source {self.mask_source!r} points at ground truth"
            )
        if self.mask_source != "silver_mask_path":
            raise ValueError(f"unknown mask_source {self.mask_source!r}")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _block(in_ch, out_ch):
    def g(ch):
        for k in (8, 4, 2):
            if ch % k == 0:
                return k
        return 1

    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, padding=1),
        nn.GroupNorm(g(out_ch), out_ch),
        nn.SiLU(),
        nn.Conv2d(out_ch, out_ch, 3, padding=1),
        nn.GroupNorm(g(out_ch), out_ch),
        nn.SiLU(),
    )


class UNet(nn.Module):
    def __init__(self, depth=4, base_channels=16, num_classes=NUM_CLASSES):
        super().__init__()
        self.depth = depth
        self.base_channels = base_channels
        chans = [base_channels * 2**i for i in range(depth)]
        self.enc = nn.ModuleList()
        prev = 1
        for c in chans:
            self.enc.append(_block(prev, c))
            prev = c
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = _block(chans[-1], chans[-1] * 2)
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        prev = chans[-1] * 2
        for c in reversed(chans):
            self.up.append(nn.ConvTranspose2d(prev, c, 2, stride=2))
            self.dec.append(_block(2 * c, c))
            prev = c
        self.head = nn.Conv2d(chans[0], num_classes, 1)

    def forward(self, x):
        min_size = 2**self.depth
        if x.ndim != 4 or x.shape[2] % min_size or x.shape[3] % min_size:
            raise ValueError(
                f"input spatial size must be a multiple of {min_size}, got {tuple(x.shape)}"
            )
        skips = []
        h = x
        for block in self.enc:
            h = block(h)
            skips.append(h)
            h = self.pool(h)
        h = self.bottleneck(h)
        for up, block, skip in zip(self.up, self.dec, reversed(skips)):
            h = up(h)
            h = block(torch.cat([h, skip], dim=1))
        return self.head(h)


def soft_dice_loss(logits, target_onehot, eps=1e-6):
    """Mean soft-Dice loss over the two lung classes."""
    probs = torch.softmax(logits, dim=1)
    loss = 0.0
    for c in (1, 2):
        p = probs[:, c].flatten(1)
        t = target_onehot[:, c].flatten(1)
        inter = (p * t).sum(dim=1)
        denom = p.sum(dim=1) + t.sum(dim=1)
        loss = loss + (1.0 - (2.0 * inter + eps) / (denom + eps)).mean()
    return loss / 2.0


def _load_seg_arrays(manifest_path, split, mask_source):
    records = [r for r in load_manifest(manifest_path) if r["split"] == split]
    if not records:
        raise ValueError(f"manifest has no records in split {split!r}")
    images = np.stack([io_utils.load_image(r["image_path"]) for r in records])
    masks = np.stack([io_utils.load_mask(r[mask_source]) for r in records])
    return images[:, None], masks


def _augment(x, y, rng, cfg):
    if cfg.augment_intensity:
        x = np.clip(x * rng.uniform(0.95, 1.05) + rng.uniform(-0.02, 0.02), 0, 1)
    if cfg.augment_shift:
        sh = rng.integers(-2, 3, size=2)
        x = np.roll(x, sh, axis=(-2, -1))
        y = np.roll(y, sh, axis=(-2, -1))
    return x, y


def train_seg(manifest_path, config: SegTrainConfig, out_dir) -> tuple[UNet, dict]:
    """Train on the silver masks of the train split, keep the checkpoint
    with the best validation Dice (against silver) in out_dir/seg.pt."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "seg.pt"

    torch.manual_seed(config.seed)
    model = UNet(config.depth, config.base_channels)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    shuffle_gen = torch.Generator().manual_seed(config.seed)
    aug_rng = np.random.default_rng(config.seed)

    tr_x, tr_y = _load_seg_arrays(manifest_path, "train", config.mask_source)
    va_x, va_y = _load_seg_arrays(manifest_path, "val", config.mask_source)

    ce = nn.CrossEntropyLoss()
    report = {"epochs": [], "best_epoch": -1, "best_val_dice": -1.0}
    started = time.time()
    n = tr_x.shape[0]
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = torch.randperm(n, generator=shuffle_gen).numpy()
        ep_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = _augment(tr_x[idx], tr_y[idx], aug_rng, config)
            x = torch.from_numpy(np.ascontiguousarray(xb))
            y = torch.from_numpy(np.ascontiguousarray(yb)).long()
            logits = model(x)
            onehot = torch.nn.functional.one_hot(y, NUM_CLASSES).permute(0, 3, 1, 2).float()
            loss = config.ce_weight * ce(logits, y) + config.dice_weight * soft_dice_loss(
                logits, onehot
            )
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            ep_loss += float(loss.detach()) * len(idx) / n
        val_dice = _eval_dice(model, va_x, va_y, config.batch_size)
        report["epochs"].append({"epoch": epoch, "train_loss": ep_loss, "val_dice": val_dice})
        if val_dice > report["best_val_dice"]:
            report["best_val_dice"] = val_dice
            report["best_epoch"] = epoch
            checkpoints.save(
                ckpt_path, "segmenter", config.as_dict(), model.state_dict(),
                extra={"epoch": epoch, "val_dice": val_dice},
            )
    report["wall_s"] = time.time() - started
    with open(out_dir / "seg_report.json", "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)
        f.write("\n")
    return load_seg(ckpt_path), report


@torch.no_grad()
def _eval_dice(model, images, masks, batch_size):
    model.eval()
    scores = []
    for start in range(0, images.shape[0], batch_size):
        x = torch.from_numpy(images[start : start + batch_size])
        pred = model(x).argmax(dim=1).numpy().astype(np.uint8)
        for p, t in zip(pred, masks[start : start + batch_size]):
            scores.append(metrics.dice(p, t, "both"))
    return float(np.mean(scores))


def load_seg(path) -> UNet:
    blob = checkpoints.load(path, "segmenter")
    cfg = blob["config"]
    model = UNet(cfg["depth"], cfg["base_channels"])
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model


def seg_checksum(model: UNet) -> str:
    return checkpoints.state_checksum(model.state_dict())


@torch.no_grad()
def segment(model: UNet, image: np.ndarray) -> np.ndarray:
    """Per-pixel argmax labels for one image; deterministic."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    model.eval()
    logits = model(torch.from_numpy(img)[None, None])
    return logits.argmax(dim=1)[0].numpy().astype(np.uint8)


@torch.no_grad()
def segment_batch(model: UNet, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
    model.eval()
    out = []
    for start in range(0, images.shape[0], batch_size):
        x = torch.from_numpy(images[start : start + batch_size, None])
        out.append(model(x).argmax(dim=1).numpy().astype(np.uint8))
    return np.concatenate(out, axis=0)
