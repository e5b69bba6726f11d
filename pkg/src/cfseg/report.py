"""Quantitative evaluation: Dice tables (all vs undersegmented subset),
volume densities, population-consistency overlap scores, and qualitative
panels, assembled from the two inference arms' results manifests."""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io_utils, metrics, viz
from .synth_scm import load_manifest

STRUCTURE_NAMES = {1: "right", 2: "left", "both": "both"}


class ChecksumMismatchError(RuntimeError):
    """The two arms were produced by different segmenter parameters; any
    comparison between them would be invalid."""


@dataclass
class EvalReport:
    dice_table: dict
    overlap_scores: dict
    sample_counts: dict
    seg_checksum: str
    config_hash: str
    bins: dict
    delta_v_plus_ids: dict
    cell_samples: dict
    conventions: dict
    effectiveness: dict | None = None

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.as_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def _merge_arms(results_paths) -> dict:
    by_arm = {}
    for path in results_paths:
        for rec in load_manifest(path):
            by_arm.setdefault(rec["arm"], {})[rec["id"]] = rec
    missing = {"direct", "cfseg"} - set(by_arm)
    if missing:
        raise ValueError(f"results manifests lack arm(s): {sorted(missing)}")
    ids_direct = set(by_arm["direct"])
    ids_cfseg = set(by_arm["cfseg"])
    if ids_direct != ids_cfseg:
        raise ValueError(
            f"arms cover different samples, e.g. {sorted(ids_direct ^ ids_cfseg)[:5]}"
        )
    checksums = {
        rec["seg_checksum"] for arm in by_arm.values() for rec in arm.values()
    }
    if len(checksums) != 1:
        raise ChecksumMismatchError(
            f"segmenter checksums differ across arms: {sorted(checksums)}"
        )
    return by_arm


def build_report(results_paths, dataset_manifest, out_dir, pixel_area: float = 1.0,
                 effectiveness: dict | None = None, n_qualitative: int = 4,
                 seed: int = 0) -> EvalReport:
    """Compute the full evaluation over every sample present in both arms.

    Writes report.json, dice_table.csv and figures/ under out_dir."""
    out_dir = Path(out_dir)
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    by_arm = _merge_arms(results_paths)
    seg_checksum = next(iter(by_arm["direct"].values()))["seg_checksum"]

    dataset = {r["id"]: r for r in load_manifest(dataset_manifest)}
    ids = sorted(by_arm["direct"])
    unknown = [i for i in ids if i not in dataset]
    if unknown:
        raise ValueError(f"results reference ids missing from dataset: {unknown[:5]}")

    masks = {"direct": {}, "cfseg": {}, "expert": {}, "silver": {}}
    for sid in ids:
        masks["expert"][sid] = io_utils.load_mask(dataset[sid]["gt_mask_path"])
        masks["silver"][sid] = io_utils.load_mask(dataset[sid]["silver_mask_path"])
        masks["direct"][sid] = io_utils.load_mask(by_arm["direct"][sid]["pred_mask_path"])
        masks["cfseg"][sid] = io_utils.load_mask(by_arm["cfseg"][sid]["pred_mask_path"])

    diseased = [i for i in ids if dataset[i]["disease"] == 1]
    healthy = [i for i in ids if dataset[i]["disease"] == 0]

    volumes = {
        method: {
            s: {sid: metrics.volume(masks[method][sid], s, pixel_area) for sid in ids}
            for s in metrics.STRUCTURES
        }
        for method in masks
    }

    dv_ids = {
        STRUCTURE_NAMES[s]: metrics.delta_v_plus(volumes["expert"][s], volumes["silver"][s])
        for s in metrics.STRUCTURES
    }

    dice_table = {}
    cell_samples = {}
    for method in ("direct", "cfseg"):
        dice_table[method] = {}
        for s in metrics.STRUCTURES:
            name = STRUCTURE_NAMES[s]
            per_id = {
                sid: metrics.dice(masks[method][sid], masks["expert"][sid], s)
                for sid in ids
            }
            all_ids = diseased
            dv = [sid for sid in dv_ids[name] if sid in set(diseased)]
            dice_table[method][name] = {
                "all": float(np.mean([per_id[i] for i in all_ids])) if all_ids else float("nan"),
                "dv_plus": float(np.mean([per_id[i] for i in dv])) if dv else float("nan"),
            }
            cell_samples[f"{method}|{name}|all"] = list(all_ids)
            cell_samples[f"{method}|{name}|dv_plus"] = list(dv)

    # shared Freedman-Diaconis binning per structure so overlap scores are
    # comparable across methods
    bins = {}
    overlap_scores = {}
    for s in metrics.STRUCTURES:
        name = STRUCTURE_NAMES[s]
        pooled = [v for method in masks for v in volumes[method][s].values()]
        bins[name] = metrics.fd_bins(pooled)
    if healthy and diseased:
        for method in masks:
            overlap_scores[method] = {}
            for s in metrics.STRUCTURES:
                name = STRUCTURE_NAMES[s]
                nf = [volumes[method][s][i] for i in healthy]
                dis = [volumes[method][s][i] for i in diseased]
                overlap_scores[method][name] = metrics.density_overlap(
                    nf, dis, bins[name]
                )

    # figures: per-method volume densities on diseased samples, population
    # NF-vs-diseased comparison on the right lung, qualitative panels
    if diseased:
        for s in metrics.STRUCTURES:
            name = STRUCTURE_NAMES[s]
            viz.volume_density_figure(
                {m: [volumes[m][s][i] for i in diseased] for m in masks},
                f"{name} lung volumes, diseased samples",
                fig_dir / f"volumes_diseased_{name}.png",
            )
    if healthy and diseased:
        viz.group_density_figure(
            {
                m: {
                    "no finding": [volumes[m][1][i] for i in healthy],
                    "diseased": [volumes[m][1][i] for i in diseased],
                }
                for m in ("silver", "direct", "cfseg", "expert")
            },
            "right lung volume density, by population",
            fig_dir / "population_right.png",
        )
    if diseased:
        rng = np.random.default_rng(seed)
        chosen = list(rng.choice(diseased, size=min(n_qualitative, len(diseased)), replace=False))
        rows = []
        for sid in chosen:
            image = io_utils.load_image(dataset[sid]["image_path"])
            cf_path = by_arm["cfseg"][sid].get("cf_image_path")
            cols = {
                "silver": (image, masks["silver"][sid]),
                "expert": (image, masks["expert"][sid]),
                "direct": (image, masks["direct"][sid]),
                "cfseg": (image, masks["cfseg"][sid]),
            }
            if cf_path:
                cols["cfseg on CF"] = (io_utils.load_image(cf_path), masks["cfseg"][sid])
            rows.append((sid, cols))
        viz.qualitative_panel(rows, fig_dir / "qualitative.png")

    report = EvalReport(
        dice_table=dice_table,
        overlap_scores=overlap_scores,
        sample_counts={
            "eval": len(ids),
            "diseased": len(diseased),
            "healthy": len(healthy),
            "dv_plus": {k: len(v) for k, v in dv_ids.items()},
        },
        seg_checksum=seg_checksum,
        config_hash=io_utils.config_hash(
            {"pixel_area": pixel_area, "seed": seed, "results": [str(p) for p in results_paths]}
        ),
        bins=bins,
        delta_v_plus_ids=dv_ids,
        cell_samples=cell_samples,
        conventions={
            "empty_vs_empty_dice": 1.0,
            "both_lungs": "labels binarized to a single foreground",
            "bin_policy": "Freedman-Diaconis on data pooled across methods and groups",
            "expert": "synthetic ground-truth masks",
        },
        effectiveness=effectiveness,
    )
    report.save(out_dir / "report.json")
    with open(out_dir / "dice_table.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "structure", "all", "dv_plus"])
        for method, row in report.dice_table.items():
            for name, cells in row.items():
                writer.writerow([method, name, f"{cells['all']:.6f}", f"{cells['dv_plus']:.6f}"])
    return report
