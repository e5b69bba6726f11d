"""Rendering helpers: mask overlays (right lung red, left lung green),
volume density figures, and qualitative comparison panels."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image
from scipy.stats import gaussian_kde

RIGHT_COLOR = np.array([220, 40, 40], dtype=np.float64)
LEFT_COLOR = np.array([40, 180, 60], dtype=np.float64)


def overlay(image: np.ndarray, mask: np.ndarray, alpha: float = 0.35) -> np.ndarray:
    """Alpha-blend a label mask onto a grayscale image; returns uint8 RGB."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if img.shape != mask.shape:
        raise ValueError(f"image/mask shapes differ: {img.shape} vs {mask.shape}")
    rgb = np.repeat(img[:, :, None] * 255.0, 3, axis=2)
    for label, color in ((1, RIGHT_COLOR), (2, LEFT_COLOR)):
        sel = mask == label
        rgb[sel] = (1.0 - alpha) * rgb[sel] + alpha * color
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)


def overlay_png_bytes(image: np.ndarray, mask: np.ndarray | None = None) -> bytes:
    """PNG-encoded overlay (or plain grayscale when mask is None)."""
    if mask is None:
        rgb = np.repeat(
            (np.clip(image, 0, 1) * 255.0).round().astype(np.uint8)[:, :, None], 3, axis=2
        )
    else:
        rgb = overlay(image, mask)
    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _kde_curve(values, grid):
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2 or np.std(values) == 0:
        return None
    return gaussian_kde(values)(grid)


def volume_density_figure(volumes_by_method: dict, title: str, path) -> None:
    """KDE curves of per-method volumes on a shared axis (illustrative;
    the quantitative overlap score uses fixed-bin histograms)."""
    all_vals = np.concatenate([np.asarray(v, dtype=np.float64) for v in volumes_by_method.values()])
    lo, hi = all_vals.min(), all_vals.max()
    pad = 0.1 * (hi - lo if hi > lo else 1.0)
    grid = np.linspace(lo - pad, hi + pad, 256)
    fig, ax = plt.subplots(figsize=(6, 4))
    for method, vals in volumes_by_method.items():
        curve = _kde_curve(vals, grid)
        if curve is not None:
            ax.plot(grid, curve, label=method)
    ax.set_xlabel("volume")
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def group_density_figure(per_method: dict, title: str, path) -> None:
    """One subplot per method, overlaying the healthy and diseased volume
    densities (population-consistency view)."""
    methods = list(per_method)
    fig, axes = plt.subplots(1, len(methods), figsize=(4 * len(methods), 3.2), squeeze=False)
    for ax, method in zip(axes[0], methods):
        groups = per_method[method]
        all_vals = np.concatenate([np.asarray(v, dtype=np.float64) for v in groups.values()])
        lo, hi = all_vals.min(), all_vals.max()
        pad = 0.1 * (hi - lo if hi > lo else 1.0)
        grid = np.linspace(lo - pad, hi + pad, 256)
        for group, vals in groups.items():
            curve = _kde_curve(vals, grid)
            if curve is not None:
                ax.plot(grid, curve, label=group)
        ax.set_title(method)
        ax.legend(fontsize=8)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def qualitative_panel(rows: list, path) -> None:
    """Grid of overlay comparisons. Each row is (sample id, ordered dict of
    column title -> (image, mask-or-None))."""
    n_rows = len(rows)
    n_cols = len(rows[0][1])
    fig, axes = plt.subplots(
        n_rows, n_cols, figsize=(2.2 * n_cols, 2.4 * n_rows), squeeze=False
    )
    for r, (sid, cols) in enumerate(rows):
        for c, (title, (image, mask)) in enumerate(cols.items()):
            ax = axes[r][c]
            if mask is None:
                ax.imshow(image, cmap="gray", vmin=0, vmax=1)
            else:
                ax.imshow(overlay(image, mask))
            if r == 0:
                ax.set_title(title, fontsize=9)
            if c == 0:
                ax.set_ylabel(sid, fontsize=8)
            ax.set_xticks([])
            ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
