"""Segmentation and population metrics: Dice, structure volumes, the
positive-volume-difference subset, and histogram-intersection overlap of
volume distributions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

STRUCTURES = (1, 2, "both")
METHOD_TAGS = ("expert", "silver", "direct", "cfseg")


@dataclass(frozen=True)
class VolumeRecord:
    sample_id: str
    structure: object  # 1, 2, or "both"
    volume: float
    method: str

    def __post_init__(self):
        if self.method not in METHOD_TAGS:
            raise ValueError(f"method must be one of {METHOD_TAGS}, got {self.method!r}")
        if self.volume < 0:
            raise ValueError("volume must be >= 0")


def _counts_for(structure, counts):
    if structure == 1:
        return counts[0], counts[1], counts[2]
    if structure == 2:
        return counts[3], counts[4], counts[5]
    if structure == "both":
        return counts[6], counts[7], counts[8]
    raise ValueError(f"structure must be 1, 2 or 'both', got {structure!r}")


def dice(a: np.ndarray, b: np.ndarray, structure="both") -> float:
    """2|A∩B| / (|A|+|B|) for the given structure. 'both' binarizes the two
    lung labels into a single foreground. Empty vs empty counts as 1.0."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    na, nb, ni = _counts_for(structure, kernels.overlap_counts(a, b))
    if na + nb == 0:
        return 1.0
    return 2.0 * ni / (na + nb)


def volume(mask: np.ndarray, structure, pixel_area: float = 1.0) -> float:
    """Pixel count of the structure times the per-pixel area."""
    if pixel_area <= 0:
        raise ValueError("pixel_area must be positive")
    mask = np.asarray(mask)
    counts = kernels.overlap_counts(mask, mask)
    n, _, _ = _counts_for(structure, counts)
    return float(n) * pixel_area


def delta_v_plus(expert_volumes: dict, silver_volumes: dict) -> list:
    """Ids whose expert volume strictly exceeds the silver volume — the
    undersegmented cases. Inputs map id -> volume over matched ids."""
    if set(expert_volumes) != set(silver_volumes):
        missing = set(expert_volumes) ^ set(silver_volumes)
        raise ValueError(f"volume id sets differ, e.g. {sorted(missing)[:5]}")
    return sorted(
        sid for sid in expert_volumes if expert_volumes[sid] - silver_volumes[sid] > 0
    )


def fd_bins(values) -> int:
    """Freedman-Diaconis bin count on pooled data (Sturges fallback when the
    IQR degenerates)."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n < 2:
        return 1
    iqr = float(np.subtract(*np.percentile(values, [75, 25])))
    span = float(values.max() - values.min())
    if iqr <= 0 or span <= 0:
        return max(1, int(np.ceil(np.log2(n) + 1)))
    width = 2.0 * iqr * n ** (-1.0 / 3.0)
    return max(1, int(np.ceil(span / width)))


def density_overlap(volumes_a, volumes_b, bins: int) -> float:
    """Histogram-intersection overlap of two samples on a shared range:
    sum over bins of min(p_a, p_b) with mass-normalized histograms.
    Symmetric, in [0,1], and 1.0 iff the histograms coincide."""
    a = np.asarray(volumes_a, dtype=np.float64)
    b = np.asarray(volumes_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("density_overlap needs nonempty inputs")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    pa, _ = np.histogram(a, bins=bins, range=(lo, hi))
    pb, _ = np.histogram(b, bins=bins, range=(lo, hi))
    pa = pa / a.size
    pb = pb / b.size
    return float(np.minimum(pa, pb).sum())
