"""Command-line entry point: data generation, training, inference,
evaluation, and the preference-study service. Every command validates its
inputs, threads explicit seeds, and writes a run record (config hash,
seeds, checksums) next to its outputs."""

from __future__ import annotations

import os
import sys
import time
from pathlib import Path

import click
import yaml

from . import checkpoints, classifier as clf_mod, io_utils, pipeline, report as report_mod
from . import segmenter as seg_mod
from .hvae import HvaeConfig
from .hvae_train import load_hvae, train_hvae
from .synth_scm import DataConfig, build_dataset


def _data_root() -> Path:
    return Path(os.environ.get("CFSEG_DATA_DIR", "data"))


def _load_yaml(path) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


@click.group()
def main():
    """Counterfactual-first lung segmentation on the synthetic benchmark."""


@main.command("gen-data")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None, help="override the config seed")
def gen_data(config_path, out_dir, seed):
    """Render the synthetic dataset and write its manifest."""
    raw = _load_yaml(config_path)
    if seed is not None:
        raw["seed"] = seed
    cfg = DataConfig(**raw)
    out_dir = Path(out_dir) if out_dir else _data_root() / "dataset"
    started = time.time()
    manifest = build_dataset(cfg, out_dir)
    io_utils.write_run_record(
        out_dir, "gen-data", cfg.as_dict(), {"seed": cfg.seed},
        wall_ms=(time.time() - started) * 1000.0, outputs=[str(manifest)],
    )
    click.echo(f"wrote {manifest}")


@main.command("train-hvae")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--data", "manifest", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--seed", type=int, default=None)
def train_hvae_cmd(config_path, manifest, out_dir, seed):
    """Fit the counterfactual image mechanism on the train split."""
    raw = _load_yaml(config_path)
    if seed is not None:
        raw["seed"] = seed
    cfg = HvaeConfig(**raw)
    started = time.time()
    model, rep = train_hvae(manifest, cfg, out_dir)
    io_utils.write_run_record(
        out_dir, "train-hvae", cfg.as_dict(), {"seed": cfg.seed},
        checksums={"hvae": checkpoints.state_checksum(model.state_dict())},
        wall_ms=(time.time() - started) * 1000.0,
        outputs=[str(Path(out_dir) / "hvae.pt")],
    )
    click.echo(
        f"best val ELBO {rep.best_val_elbo:.1f} at epoch {rep.best_epoch} "
        f"-> {Path(out_dir) / 'hvae.pt'}"
    )


@main.command("train-seg")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--data", "manifest", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--seed", type=int, default=None)
def train_seg_cmd(config_path, manifest, out_dir, seed):
    """Train the segmenter on silver-standard masks."""
    raw = _load_yaml(config_path)
    if seed is not None:
        raw["seed"] = seed
    cfg = seg_mod.SegTrainConfig(**raw)
    started = time.time()
    model, rep = seg_mod.train_seg(manifest, cfg, out_dir)
    io_utils.write_run_record(
        out_dir, "train-seg", cfg.as_dict(), {"seed": cfg.seed},
        checksums={"segmenter": seg_mod.seg_checksum(model)},
        wall_ms=(time.time() - started) * 1000.0,
        outputs=[str(Path(out_dir) / "seg.pt")],
    )
    click.echo(
        f"best val dice {rep['best_val_dice']:.4f} at epoch {rep['best_epoch']} "
        f"-> {Path(out_dir) / 'seg.pt'}"
    )


@main.command("infer")
@click.option("--data", "manifest", type=click.Path(exists=True), required=True)
@click.option("--seg", "seg_path", type=click.Path(exists=True), required=True)
@click.option("--hvae", "hvae_path", type=click.Path(exists=True), default=None)
@click.option("--arm", type=click.Choice(pipeline.ARMS), default="both")
@click.option("--split", multiple=True, default=("test",))
@click.option("--out", "out_dir", type=click.Path(), required=True)
def infer(manifest, seg_path, hvae_path, arm, split, out_dir):
    """Run the direct and/or counterfactual arm over a manifest split."""
    seg_model = seg_mod.load_seg(seg_path)
    hvae_model = load_hvae(hvae_path) if hvae_path else None
    started = time.time()
    results, failures = pipeline.batch_infer(
        manifest, out_dir, seg_model, hvae_model=hvae_model, arm=arm, splits=split
    )
    status = "ok" if not failures else f"{len(failures)} sample(s) failed"
    io_utils.write_run_record(
        out_dir, "infer", {"arm": arm, "splits": list(split)}, {},
        checksums={"segmenter": seg_mod.seg_checksum(seg_model)},
        status=status, wall_ms=(time.time() - started) * 1000.0,
        outputs=[str(results)],
    )
    click.echo(f"wrote {results} ({status})")
    if failures:
        sys.exit(1)


@main.command("evaluate")
@click.option("--results", "results_paths", type=click.Path(exists=True), multiple=True,
              required=True, help="results manifest(s); must cover both arms")
@click.option("--data", "dataset_manifest", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--classifier", "classifier_path", type=click.Path(exists=True), default=None,
              help="optional disease-classifier checkpoint for the effectiveness rate")
@click.option("--pixel-area", type=float, default=1.0)
@click.option("--seed", type=int, default=0)
def evaluate(results_paths, dataset_manifest, out_dir, classifier_path, pixel_area, seed):
    """Build the evaluation report from inference results."""
    effectiveness = None
    if classifier_path:
        model = clf_mod.load_classifier(classifier_path)
        effectiveness = clf_mod.effectiveness_from_results(
            model, results_paths, dataset_manifest
        )
    started = time.time()
    rep = report_mod.build_report(
        list(results_paths), dataset_manifest, out_dir,
        pixel_area=pixel_area, effectiveness=effectiveness, seed=seed,
    )
    io_utils.write_run_record(
        out_dir, "evaluate",
        {"pixel_area": pixel_area, "seed": seed, "results": [str(p) for p in results_paths]},
        {"seed": seed}, checksums={"segmenter": rep.seg_checksum},
        wall_ms=(time.time() - started) * 1000.0,
        outputs=[str(Path(out_dir) / "report.json")],
    )
    click.echo(f"wrote {Path(out_dir) / 'report.json'}")
    for method, row in rep.dice_table.items():
        cells = "  ".join(
            f"{name}: all={c['all']:.4f} dv+={c['dv_plus']:.4f}" for name, c in row.items()
        )
        click.echo(f"  {method:7s} {cells}")


@main.command("make-study")
@click.option("--data", "dataset_manifest", type=click.Path(exists=True), required=True)
@click.option("--method", "methods", multiple=True, required=True,
              help="NAME=MANIFEST:FIELD, exactly twice")
@click.option("--n-nf", type=int, default=150)
@click.option("--n-diseased", type=int, default=150)
@click.option("--seed", type=int, default=0)
@click.option("--rater", default="rater-1")
@click.option("--store", "store_dir", type=click.Path(), required=True)
def make_study(dataset_manifest, methods, n_nf, n_diseased, seed, rater, store_dir):
    """Create a blinded study session offline."""
    from . import study

    if len(methods) != 2:
        raise click.UsageError("exactly two --method specs are required")
    specs = []
    for m in methods:
        name, rest = m.split("=", 1)
        manifest, field = rest.rsplit(":", 1)
        specs.append((name, manifest, field))
    session = study.create_session(
        dataset_manifest, specs[0], specs[1],
        n_nf=n_nf, n_diseased=n_diseased, seed=seed, rater_id=rater,
    )
    store = study.StudyStore(store_dir)
    store.add(session)
    io_utils.write_run_record(
        store_dir, "make-study",
        {"n_nf": n_nf, "n_diseased": n_diseased, "methods": list(methods)},
        {"seed": seed}, outputs=[session.session_id],
    )
    click.echo(f"created session {session.session_id} with {session.total} trials")


@main.command("serve-study")
@click.option("--store", "store_dir", type=click.Path(), required=True)
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
@click.option("--ui", "ui_dir", type=click.Path(exists=True), default=None)
def serve_study(store_dir, host, port, ui_dir):
    """Serve the study HTTP API (and optionally the built web client)."""
    from . import study_api

    study_api.serve(store_dir, host=host, port=port, ui_dir=ui_dir)


if __name__ == "__main__":
    main()
