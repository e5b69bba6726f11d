"""Two-stage inference: generate the pseudo-healthy counterfactual, then
segment it — next to the direct baseline that segments the original image.
Both arms run the identical segmenter checkpoint; its parameter checksum is
recorded in every result so evaluation can refuse mismatched comparisons."""

from __future__ import annotations

import logging
import time
from pathlib import Path

import numpy as np

from . import causal_engine, io_utils, segmenter as seg_mod
from .synth_scm import load_manifest, record_attrs

log = logging.getLogger(__name__)

ARMS = ("direct", "cfseg", "both")


class PipelineStageError(RuntimeError):
    """Component failure annotated with the pipeline stage it occurred in."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


def infer_direct(seg_model, image: np.ndarray) -> np.ndarray:
    """Baseline arm: segment the original image."""
    return seg_mod.segment(seg_model, image)


def infer_cfseg(hvae_model, seg_model, image: np.ndarray, parents=None,
                attribute_predictor=None) -> tuple[np.ndarray, np.ndarray]:
    """Counterfactual arm: abduct the image's exogenous noise, force the
    pseudo-healthy intervention, decode, and segment the counterfactual.
    Returns (mask, counterfactual image) so callers can display the CF.

    Parents normally come from the manifest; `attribute_predictor` is a
    hook for settings where they must be estimated from the image first
    (callable image -> attribute mapping; not used by the benchmark)."""
    if parents is None:
        if attribute_predictor is None:
            raise ValueError("parents required (or provide an attribute_predictor)")
        parents = attribute_predictor(image)
    graph = causal_engine.default_graph(causal_engine.HvaeImageMechanism(hvae_model))
    observation = dict(parents.as_dict() if hasattr(parents, "as_dict") else parents)
    observation["image"] = image
    try:
        posterior = causal_engine.abduct(graph, observation)
    except Exception as err:
        raise PipelineStageError("abduction", err) from err
    try:
        values = causal_engine.predict(graph, posterior, causal_engine.PSEUDO_HEALTHY)
        cf_image = values["image"]
    except Exception as err:
        raise PipelineStageError("decode", err) from err
    try:
        mask = seg_mod.segment(seg_model, cf_image)
    except Exception as err:
        raise PipelineStageError("segment", err) from err
    return mask, cf_image


def batch_infer(manifest_path, out_dir, seg_model, hvae_model=None, arm="both",
                splits=("test",)) -> tuple[Path, list]:
    """Run one or both arms over a manifest split and write a results
    manifest. Per-sample failures are logged and skipped; the failure list
    is returned so callers can set a nonzero exit status."""
    if arm not in ARMS:
        raise ValueError(f"arm must be one of {ARMS}, got {arm!r}")
    if arm in ("cfseg", "both") and hvae_model is None:
        raise ValueError("cfseg arm requires an hvae model")
    out_dir = Path(out_dir)
    mask_dir = out_dir / "pred_masks"
    cf_dir = out_dir / "cf_images"
    mask_dir.mkdir(parents=True, exist_ok=True)
    checksum = seg_mod.seg_checksum(seg_model)

    records = [r for r in load_manifest(manifest_path) if r["split"] in splits]
    arms = ("direct", "cfseg") if arm == "both" else (arm,)
    results = []
    failures = []
    for rec in records:
        try:
            image = io_utils.load_image(rec["image_path"])
            attrs = record_attrs(rec)
        except Exception as err:
            log.warning("skipping %s: failed to load (%s)", rec["id"], err)
            failures.append({"id": rec["id"], "arm": "load", "error": str(err)})
            continue
        for a in arms:
            started = time.perf_counter()
            try:
                if a == "direct":
                    mask = infer_direct(seg_model, image)
                    cf_path = None
                else:
                    mask, cf_image = infer_cfseg(hvae_model, seg_model, image, attrs)
                    cf_dir.mkdir(parents=True, exist_ok=True)
                    cf_path = cf_dir / f"{rec['id']}_cf.png"
                    io_utils.save_image(cf_path, cf_image)
            except Exception as err:
                log.warning("skipping %s arm=%s: %s", rec["id"], a, err)
                failures.append({"id": rec["id"], "arm": a, "error": str(err)})
                continue
            wall_ms = (time.perf_counter() - started) * 1000.0
            mask_path = mask_dir / f"{rec['id']}_{a}_pred.png"
            io_utils.save_mask(mask_path, mask)
            # dataset schema (paths already resolved) plus the arm's outputs
            results.append(
                {
                    **rec,
                    "arm": a,
                    "pred_mask_path": str(mask_path.relative_to(out_dir)),
                    "cf_image_path": str(cf_path.relative_to(out_dir)) if cf_path else None,
                    "seg_checksum": checksum,
                    "wall_ms": round(wall_ms, 3),
                }
            )
    results_path = out_dir / "results.jsonl"
    io_utils.write_jsonl(results_path, results)
    if failures:
        io_utils.write_jsonl(out_dir / "failures.jsonl", failures)
    return results_path, failures
