"""Small convolutional disease classifier, trained independently of the
generative model. Serves as the effectiveness oracle: pseudo-healthy
counterfactuals of diseased images should be classified as healthy."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from . import checkpoints, io_utils
from .synth_scm import load_manifest


@dataclass
class ClassifierConfig:
    channels: tuple = (16, 32, 64)
    epochs: int = 6
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channels"] = list(self.channels)
        return d


class DiseaseClassifier(nn.Module):
    def __init__(self, channels=(16, 32, 64)):
        super().__init__()
        layers = []
        prev = 1
        for c in channels:
            layers += [nn.Conv2d(prev, c, 3, stride=2, padding=1), nn.SiLU()]
            prev = c
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(prev, 1)

    def forward(self, x):
        h = self.features(x).mean(dim=(2, 3))
        return self.head(h)[:, 0]


def train_classifier(manifest_path, config: ClassifierConfig, out_path=None):
    torch.manual_seed(config.seed)
    model = DiseaseClassifier(tuple(config.channels))
    records = [r for r in load_manifest(manifest_path) if r["split"] == "train"]
    images = np.stack([io_utils.load_image(r["image_path"]) for r in records])[:, None]
    labels = np.array([r["disease"] for r in records], dtype=np.float32)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    bce = nn.BCEWithLogitsLoss()
    gen = torch.Generator().manual_seed(config.seed)
    n = images.shape[0]
    for _ in range(config.epochs):
        model.train()
        order = torch.randperm(n, generator=gen).numpy()
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            logits = model(torch.from_numpy(images[idx]))
            loss = bce(logits, torch.from_numpy(labels[idx]))
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
    model.eval()
    if out_path is not None:
        checkpoints.save(out_path, "classifier", config.as_dict(), model.state_dict())
    return model


def load_classifier(path) -> DiseaseClassifier:
    blob = checkpoints.load(path, "classifier")
    model = DiseaseClassifier(tuple(blob["config"]["channels"]))
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model


@torch.no_grad()
def predict_disease_prob(model, images: np.ndarray) -> np.ndarray:
    """P(disease) per image for a stack of 2-D images."""
    model.eval()
    x = torch.from_numpy(np.asarray(images, dtype=np.float32))
    if x.ndim == 2:
        x = x[None]
    probs = torch.sigmoid(model(x[:, None]))
    return probs.numpy()


def healthy_rate(model, images: np.ndarray) -> float:
    """Fraction of images the classifier calls healthy (p < 0.5)."""
    return float((predict_disease_prob(model, images) < 0.5).mean())


def effectiveness_from_results(model, results_paths, dataset_manifest) -> dict:
    """Healthy-classification rate over the counterfactuals of diseased
    samples found in the given results manifests."""
    dataset = {r["id"]: r for r in load_manifest(dataset_manifest)}
    cf_images = []
    for path in results_paths:
        for rec in load_manifest(path):
            if rec.get("arm") != "cfseg" or not rec.get("cf_image_path"):
                continue
            if dataset.get(rec["id"], {}).get("disease") == 1:
                cf_images.append(io_utils.load_image(rec["cf_image_path"]))
    if not cf_images:
        return {"healthy_rate": None, "n": 0}
    rate = healthy_rate(model, np.stack(cf_images))
    return {"healthy_rate": rate, "n": len(cf_images)}
