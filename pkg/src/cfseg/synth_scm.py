"""Synthetic causal chest-image benchmark.

Generates images from a known structural causal model: binary sex, scanner
and disease attributes plus a continuous severity drive a renderer whose
exogenous noise (per-sample anatomy, global gain/offset, texture seed) is
recorded. Ground-truth lung masks come from the exact ellipse geometry and
never depend on disease; silver-standard masks emulate automatic labels
that undersegment diseased lungs, more aggressively on the right.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io_utils, kernels

RIGHT_LUNG = 1
LEFT_LUNG = 2
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class AttributeVector:
    """Endogenous attribute values for one sample.

    severity is strictly positive exactly when disease is present.
    """

    sex: int
    scanner: int
    disease: int
    severity: float = 0.0

    def __post_init__(self):
        for name in ("sex", "scanner", "disease"):
            v = getattr(self, name)
            if v not in (0, 1):
                raise ValueError(f"{name} must be 0 or 1, got {v!r}")
        if not 0.0 <= self.severity <= 1.0:
            raise ValueError(f"severity must be in [0,1], got {self.severity}")
        if self.disease == 0 and self.severity != 0.0:
            raise ValueError("severity must be 0 when disease=0")
        if self.disease == 1 and self.severity == 0.0:
            raise ValueError("severity must be positive when disease=1")

    def as_dict(self) -> dict:
        return {
            "sex": self.sex,
            "scanner": self.scanner,
            "disease": self.disease,
            "severity": self.severity,
        }


@dataclass(frozen=True)
class AnatomyParams:
    """Exogenous rendering noise: lung ellipses (pixel units), global
    intensity gain/offset, and the texture seed."""

    cy_r: float
    cx_r: float
    ry_r: float
    rx_r: float
    cy_l: float
    cx_l: float
    ry_l: float
    rx_l: float
    gain: float
    offset: float
    texture_seed: int

    def ellipses(self, scale: float = 1.0) -> np.ndarray:
        return np.array(
            [
                [self.cy_r, self.cx_r, self.ry_r * scale, self.rx_r * scale],
                [self.cy_l, self.cx_l, self.ry_l * scale, self.rx_l * scale],
            ],
            dtype=np.float64,
        )

    def validate(self, size: int, scale: float = 1.0) -> None:
        ells = self.ellipses(scale)
        for cy, cx, ry, rx in ells:
            if ry <= 0 or rx <= 0:
                raise ValueError("ellipse semi-axes must be positive")
            if cy - ry < 0 or cy + ry > size - 1 or cx - rx < 0 or cx + rx > size - 1:
                raise ValueError(
                    f"ellipse (cy={cy:.1f}, cx={cx:.1f}, ry={ry:.1f}, rx={rx:.1f}) "
                    f"exceeds {size}x{size} image bounds"
                )
        right_edge = ells[0, 1] + ells[0, 3]
        left_edge = ells[1, 1] - ells[1, 3]
        if right_edge >= left_edge:
            raise ValueError("lung ellipses overlap")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class RenderConfig:
    """Appearance constants of the image mechanism."""

    background: float = 0.82
    lung_intensity: float = 0.30
    edge_width: float = 0.5           # softness band of the ellipse boundary, in e units
    effusion_amp: float = 0.50        # peak added opacity at the lung base
    right_opacity_mult: float = 1.25  # basal opacity is stronger on the right
    texture_amp: float = 0.02
    texture_grid: int = 9
    sex_scale: float = 0.06           # sex=1 enlarges lung axes by this fraction
    scanner_gain: float = 0.92        # scanner=1 contrast multiplier
    scanner_offset: float = 0.05      # scanner=1 brightness shift

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class DataConfig:
    n: int = 1000
    seed: int = 0
    size: int = 64
    split_ratios: tuple = (0.7, 0.2, 0.1)  # train / val / test
    disease_prevalence: float = 0.1
    degrade_k_right: float = 0.8
    degrade_k_left: float = 0.5
    degrade_threshold: float = 0.25
    degrade_jitter: int = 1
    render: RenderConfig = field(default_factory=RenderConfig)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        self.split_ratios = tuple(float(r) for r in self.split_ratios)
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ValueError("split_ratios must be 3 fractions summing to 1")
        if not 0.0 <= self.disease_prevalence <= 1.0:
            raise ValueError("disease_prevalence must be in [0,1]")
        if isinstance(self.render, dict):
            self.render = RenderConfig(**self.render)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["split_ratios"] = list(self.split_ratios)
        return d


# ---------------------------------------------------------------------------
# attribute and anatomy sampling
# ---------------------------------------------------------------------------


def sample_attributes(
    seed: int,
    n: int,
    disease_prevalence: float = 0.1,
    sex_prevalence: float = 0.5,
    scanner_prevalence: float = 0.5,
    severity_range: tuple = (0.2, 0.8),
) -> list[AttributeVector]:
    """Draw n attribute vectors; sex, scanner and disease are independent
    Bernoullis, severity is uniform on severity_range for diseased samples
    and exactly 0 otherwise."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    sex = rng.random(n) < sex_prevalence
    scanner = rng.random(n) < scanner_prevalence
    disease = rng.random(n) < disease_prevalence
    lo, hi = severity_range
    severity = rng.uniform(lo, hi, size=n)
    out = []
    for i in range(n):
        d = int(disease[i])
        out.append(
            AttributeVector(
                sex=int(sex[i]),
                scanner=int(scanner[i]),
                disease=d,
                severity=float(severity[i]) if d else 0.0,
            )
        )
    return out


def sample_anatomy(rng: np.random.Generator, size: int, headroom: float = 1.08) -> AnatomyParams:
    """Draw rendering exogenous noise. Centers are clamped so both ellipses
    stay inside the frame and disjoint even when axes are later scaled by up
    to ``headroom`` (covers the sex effect)."""
    h = w = float(size)

    def axes():
        return (
            max(1.0, rng.uniform(0.20, 0.26) * h),
            max(1.0, rng.uniform(0.11, 0.145) * w),
        )

    def center(lo_frac, hi_frac, radius, dim):
        lo = max(lo_frac * dim, radius * headroom + 0.01)
        hi = min(hi_frac * dim, (dim - 1.0) - radius * headroom - 0.01)
        if hi <= lo:
            return ((radius * headroom) + (dim - 1.0 - radius * headroom)) / 2.0
        return rng.uniform(lo, hi)

    ry_r, rx_r = axes()
    ry_l, rx_l = axes()
    anatomy = AnatomyParams(
        cy_r=center(0.48, 0.56, ry_r, h),
        cx_r=center(0.26, 0.30, rx_r, w),
        ry_r=ry_r,
        rx_r=rx_r,
        cy_l=center(0.48, 0.56, ry_l, h),
        cx_l=center(0.70, 0.74, rx_l, w),
        ry_l=ry_l,
        rx_l=rx_l,
        gain=rng.uniform(0.95, 1.05),
        offset=rng.uniform(-0.03, 0.03),
        texture_seed=int(rng.integers(0, 2**31 - 1)),
    )
    anatomy.validate(size, scale=headroom)
    return anatomy


# ---------------------------------------------------------------------------
# rendering (the ground-truth image mechanism)
# ---------------------------------------------------------------------------


def render(
    attrs: AttributeVector,
    anatomy: AnatomyParams,
    size: int = 64,
    cfg: RenderConfig | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Render one sample. Returns (image float32 in [0,1], gt mask uint8).

    The gt mask is the exact (sex-scaled) ellipse interiors and is identical
    whatever the disease status; disease only adds a basal opacity ramp.
    """
    cfg = cfg or RenderConfig()
    scale = 1.0 + cfg.sex_scale * attrs.sex
    anatomy.validate(size, scale)
    ells = anatomy.ellipses(scale)

    m_r, m_l, gt = kernels.lung_fields(size, size, ells, cfg.edge_width)
    m = np.clip(m_r + m_l, 0.0, 1.0)
    img = cfg.background * (1.0 - m) + cfg.lung_intensity * m

    if attrs.disease:
        img = img + kernels.effusion_overlay(
            m_r,
            m_l,
            ells,
            attrs.severity,
            cfg.effusion_amp * cfg.right_opacity_mult,
            cfg.effusion_amp,
        )

    tex_rng = np.random.default_rng(anatomy.texture_seed)
    grid = tex_rng.standard_normal((cfg.texture_grid, cfg.texture_grid))
    img = img + cfg.texture_amp * kernels.value_noise(size, size, grid)

    gain = anatomy.gain * (cfg.scanner_gain if attrs.scanner else 1.0)
    offset = anatomy.offset + (cfg.scanner_offset if attrs.scanner else 0.0)
    img = np.clip(img * gain + offset, 0.0, 1.0)
    return img.astype(np.float32), gt


# ---------------------------------------------------------------------------
# silver-standard degradation
# ---------------------------------------------------------------------------


def degrade_to_silver(
    gt_mask: np.ndarray,
    attrs: AttributeVector,
    rng: np.random.Generator | None = None,
    k_right: float = 0.8,
    k_left: float = 0.5,
    threshold: float = 0.25,
    jitter: int = 1,
) -> np.ndarray:
    """Emulate automatic-label behavior: exact copy for healthy samples;
    for diseased samples above the severity threshold, drop the bottom
    k*severity fraction of each lung's rows with a ragged (removal-only)
    boundary. Right lung is clipped harder than the left."""
    gt_mask = np.asarray(gt_mask, dtype=np.uint8)
    if attrs.disease == 0 or attrs.severity <= threshold:
        return gt_mask.copy()
    if rng is None:
        rng = np.random.default_rng(0)
    out = gt_mask
    for label, k in ((RIGHT_LUNG, k_right), (LEFT_LUNG, k_left)):
        rows = np.flatnonzero((out == label).any(axis=1))
        if rows.size == 0:
            continue
        height = rows[-1] - rows[0] + 1
        n_cut = max(1, int(np.floor(k * attrs.severity * height)))
        cut_row = int(rows[-1]) - n_cut + 1
        col_jitter = rng.integers(-jitter, jitter + 1, size=out.shape[1])
        clipped = kernels.clip_mask_rows(out, label, cut_row, col_jitter)
        if (clipped == label).sum() == (out == label).sum():
            # jitter happened to erase the whole cut (tiny lungs); redo
            # straight so the silver mask stays a strict subset
            clipped = kernels.clip_mask_rows(
                out, label, cut_row, np.zeros(out.shape[1], dtype=np.int64)
            )
        out = clipped
    return out


# ---------------------------------------------------------------------------
# dataset build
# ---------------------------------------------------------------------------


def _largest_remainder(total: int, fractions) -> list[int]:
    raw = [total * f for f in fractions]
    counts = [int(np.floor(x)) for x in raw]
    short = total - sum(counts)
    order = np.argsort([c - x for c, x in zip(counts, raw)])
    for i in range(short):
        counts[order[i]] += 1
    return counts


def assign_splits(diseased_flags, ratios, rng: np.random.Generator) -> list[str]:
    """Stratified split assignment: exact totals per split, diseased counts
    apportioned by largest remainder within each stratum."""
    n = len(diseased_flags)
    totals = _largest_remainder(n, ratios)
    idx_d = [i for i, d in enumerate(diseased_flags) if d]
    idx_h = [i for i, d in enumerate(diseased_flags) if not d]
    rng.shuffle(idx_d)
    rng.shuffle(idx_h)
    d_counts = _largest_remainder(len(idx_d), ratios)
    # healthy takes whatever room is left so split totals stay exact
    h_counts = [t - d for t, d in zip(totals, d_counts)]
    if any(c < 0 for c in h_counts):
        raise ValueError("split ratios incompatible with disease counts")
    splits = [""] * n
    for name, dc, hc in zip(SPLITS, d_counts, h_counts):
        for i in idx_d[:dc]:
            splits[i] = name
        idx_d = idx_d[dc:]
        for i in idx_h[:hc]:
            splits[i] = name
        idx_h = idx_h[hc:]
    return splits


def build_dataset(config: DataConfig, out_dir) -> Path:
    """Render the full dataset to disk and return the manifest path.

    Layout: images/ and masks/ PNG files, manifest.jsonl with one record
    per sample, anatomy.jsonl carrying the exogenous rendering noise so the
    exact counterfactual oracle can re-render any sample.
    """
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    mask_dir = out_dir / "masks"
    img_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)

    attrs = sample_attributes(
        config.seed, config.n, disease_prevalence=config.disease_prevalence
    )
    anat_rng = np.random.default_rng([config.seed, 1])
    headroom = 1.0 + config.render.sex_scale + 0.02
    anatomies = [
        sample_anatomy(anat_rng, config.size, headroom) for _ in range(config.n)
    ]
    split_rng = np.random.default_rng([config.seed, 2])
    splits = assign_splits([a.disease for a in attrs], config.split_ratios, split_rng)

    records = []
    anat_records = []
    for i, (a, anat, split) in enumerate(zip(attrs, anatomies, splits)):
        sid = f"s{i:06d}"
        img, gt = render(a, anat, config.size, config.render)
        silver = degrade_to_silver(
            gt,
            a,
            rng=np.random.default_rng([config.seed, 3, i]),
            k_right=config.degrade_k_right,
            k_left=config.degrade_k_left,
            threshold=config.degrade_threshold,
            jitter=config.degrade_jitter,
        )
        img_path = img_dir / f"{sid}.png"
        gt_path = mask_dir / f"{sid}_gt.png"
        silver_path = mask_dir / f"{sid}_silver.png"
        io_utils.save_image(img_path, img)
        io_utils.save_mask(gt_path, gt)
        io_utils.save_mask(silver_path, silver)
        records.append(
            {
                "id": sid,
                "image_path": str(img_path.relative_to(out_dir)),
                "gt_mask_path": str(gt_path.relative_to(out_dir)),
                "silver_mask_path": str(silver_path.relative_to(out_dir)),
                "sex": a.sex,
                "scanner": a.scanner,
                "disease": a.disease,
                "severity": a.severity,
                "split": split,
            }
        )
        anat_records.append({"id": sid, **anat.as_dict()})

    manifest = out_dir / "manifest.jsonl"
    io_utils.write_jsonl(manifest, records)
    io_utils.write_jsonl(out_dir / "anatomy.jsonl", anat_records)
    return manifest


# ---------------------------------------------------------------------------
# manifest access helpers
# ---------------------------------------------------------------------------


def load_manifest(path) -> list[dict]:
    """Read a dataset/results manifest, resolving paths against its folder."""
    path = Path(path)
    records = io_utils.read_jsonl(path)
    root = path.parent
    for rec in records:
        for key, val in list(rec.items()):
            if key.endswith("_path") or key == "image_path":
                if val is not None and not Path(val).is_absolute():
                    rec[key] = str(root / val)
    return records


def record_attrs(rec: dict) -> AttributeVector:
    return AttributeVector(
        sex=int(rec["sex"]),
        scanner=int(rec["scanner"]),
        disease=int(rec["disease"]),
        severity=float(rec["severity"]),
    )


def load_anatomy(dataset_dir) -> dict[str, AnatomyParams]:
    recs = io_utils.read_jsonl(Path(dataset_dir) / "anatomy.jsonl")
    return {
        r["id"]: AnatomyParams(**{k: v for k, v in r.items() if k != "id"})
        for r in recs
    }
