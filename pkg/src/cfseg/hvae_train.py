"""Training loop for the conditional HVAE."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoints, io_utils
from .hvae import HvaeConfig, HvaeModel, parent_vector
from .synth_scm import load_manifest, record_attrs


class TrainingDiverged(RuntimeError):
    def __init__(self, message, checkpoint_path=None, report=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
        self.report = report


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # one entry per completed epoch
    best_epoch: int = -1
    best_val_elbo: float = -np.inf
    wall_s: float = 0.0

    def add_epoch(self, **entry):
        self.epochs.append(entry)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.as_dict(), f, indent=2)
            f.write("\n")


def load_split_arrays(manifest_path, splits, parent_vars):
    """Images and parent vectors for the requested splits, in manifest order."""
    records = [r for r in load_manifest(manifest_path) if r["split"] in splits]
    if not records:
        raise ValueError(f"manifest has no records in splits {splits}")
    images = np.stack([io_utils.load_image(r["image_path"]) for r in records])
    pas = np.stack([parent_vector(record_attrs(r), parent_vars) for r in records])
    return records, images[:, None], pas


def _epoch_pass(model, images, pas, batch_size, generator=None, optimizer=None,
                grad_clip=0.0, val_noise_seed=None):
    """One pass over the data. With an optimizer this is a training epoch
    (shuffled, sampled posterior); without, a validation pass with noise
    fixed across epochs so ELBO estimates stay comparable."""
    n = images.shape[0]
    device = next(model.parameters()).device
    if optimizer is not None:
        order = torch.randperm(n, generator=generator).numpy()
    else:
        order = np.arange(n)
        noise_gen = torch.Generator().manual_seed(val_noise_seed)
    tot = {"elbo": 0.0, "recon_nll": 0.0}
    kl_sums = None
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        x = torch.from_numpy(images[idx]).to(device)
        pa = torch.from_numpy(pas[idx]).to(device)
        if optimizer is not None:
            loss, parts = model.loss(x, pa)
            if not np.isfinite(loss.item()):
                raise FloatingPointError(f"non-finite loss {loss.item()}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            if grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
            optimizer.step()
        else:
            with torch.no_grad():
                eps = [
                    torch.randn(
                        (len(idx), zc, r, r), generator=noise_gen
                    ).to(device)
                    for zc, r in zip(model.config.z_channels, model.config.level_res)
                ]
                _, parts = model.loss(x, pa, eps=eps)
        w = len(idx) / n
        tot["elbo"] += parts["elbo"] * w
        tot["recon_nll"] += parts["recon_nll"] * w
        if kl_sums is None:
            kl_sums = [0.0] * len(parts["kl_per_level"])
        for i, k in enumerate(parts["kl_per_level"]):
            kl_sums[i] += k * w
    tot["kl_per_level"] = kl_sums
    return tot


def train_hvae(manifest_path, config: HvaeConfig, out_dir) -> tuple[HvaeModel, TrainReport]:
    """Fit the HVAE on the train split, checkpoint the best validation ELBO
    into out_dir/hvae.pt and write out_dir/hvae_report.json. Aborts with the
    last finite checkpoint on divergence."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "hvae.pt"
    report_path = out_dir / "hvae_report.json"

    torch.manual_seed(config.seed)
    model = HvaeModel(config)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    shuffle_gen = torch.Generator().manual_seed(config.seed)

    _, tr_images, tr_pas = load_split_arrays(manifest_path, ("train",), config.parent_vars)
    _, va_images, va_pas = load_split_arrays(manifest_path, ("val",), config.parent_vars)

    report = TrainReport()
    started = time.time()
    saved_any = False
    for epoch in range(1, config.epochs + 1):
        model.train()
        try:
            tr = _epoch_pass(
                model, tr_images, tr_pas, config.batch_size,
                generator=shuffle_gen, optimizer=optimizer, grad_clip=config.grad_clip,
            )
        except FloatingPointError as err:
            report.wall_s = time.time() - started
            report.save(report_path)
            raise TrainingDiverged(
                f"training diverged at epoch {epoch}: {err}. "
                f"Last finite checkpoint: {ckpt_path if saved_any else 'none'}",
                checkpoint_path=ckpt_path if saved_any else None,
                report=report,
            ) from err
        model.eval()
        va = _epoch_pass(
            model, va_images, va_pas, config.batch_size, val_noise_seed=config.seed + 9999
        )
        report.add_epoch(
            epoch=epoch,
            train_elbo=tr["elbo"],
            train_recon_nll=tr["recon_nll"],
            train_kl_per_level=tr["kl_per_level"],
            val_elbo=va["elbo"],
            val_recon_nll=va["recon_nll"],
            val_kl_per_level=va["kl_per_level"],
            best_val_elbo_so_far=max(report.best_val_elbo, va["elbo"]),
        )
        if va["elbo"] > report.best_val_elbo:
            report.best_val_elbo = va["elbo"]
            report.best_epoch = epoch
            checkpoints.save(
                ckpt_path, "hvae", config.as_dict(), model.state_dict(),
                extra={"epoch": epoch, "val_elbo": va["elbo"]},
            )
            saved_any = True

    report.wall_s = time.time() - started
    report.save(report_path)
    best = load_hvae(ckpt_path)
    return best, report


def load_hvae(path) -> HvaeModel:
    blob = checkpoints.load(path, "hvae")
    cfg = dict(blob["config"])
    for k in ("level_res", "z_channels", "widths", "parent_vars"):
        cfg[k] = tuple(cfg[k])
    model = HvaeModel(HvaeConfig(**cfg))
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model
