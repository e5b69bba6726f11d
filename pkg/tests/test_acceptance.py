"""Acceptance suite: every criterion runs at the default desk-scale
configuration (64x64, 2000 train / 300 test, ~10% diseased) and prints one
PASS/FAIL line.

The full pipeline (data, HVAE, segmenter, classifier, inference, report)
builds once per session. Set CFSEG_ACCEPT_DIR to a writable directory to
cache the artifacts across runs; each stage is skipped when its outputs
already exist with a matching config hash.
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch

import conftest
from cfseg import classifier as clf_mod
from cfseg import io_utils, metrics, pipeline, study, study_api
from cfseg.causal_engine import OracleImageMechanism, counterfactual, default_graph
from cfseg.hvae import HvaeConfig, HvaeModel, decode, encode, reconstruct
from cfseg.hvae_train import load_hvae, train_hvae
from cfseg.report import build_report
from cfseg.segmenter import SegTrainConfig, load_seg, segment, train_seg
from cfseg.synth_scm import (
    AttributeVector,
    DataConfig,
    build_dataset,
    load_anatomy,
    load_manifest,
    record_attrs,
    render,
)

DATA_CFG = DataConfig(
    n=2500, seed=1234, size=64, split_ratios=(0.8, 0.08, 0.12), disease_prevalence=0.1
)
HVAE_CFG = HvaeConfig(seed=0)
SEG_CFG = SegTrainConfig(seed=0, epochs=12)
CLF_CFG = clf_mod.ClassifierConfig(seed=0)


def criterion(name, ok, detail):
    line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    conftest.ACCEPTANCE_LINES.append(line)
    assert ok, line


def _stage(root, name, cfg_dict, outputs, builder):
    """Run a build stage unless its outputs and config marker already match."""
    marker = root / f"{name}.done"
    want = io_utils.config_hash(cfg_dict)
    if marker.exists() and marker.read_text().strip() == want:
        if all(Path(p).exists() for p in outputs):
            return 0.0
    started = time.time()
    builder()
    wall = time.time() - started
    marker.write_text(want + "\n")
    return wall


@pytest.fixture(scope="session")
def acceptance(tmp_path_factory):
    env_dir = os.environ.get("CFSEG_ACCEPT_DIR")
    root = Path(env_dir) if env_dir else tmp_path_factory.mktemp("acceptance")
    root.mkdir(parents=True, exist_ok=True)
    walls = {}

    manifest = root / "ds" / "manifest.jsonl"
    walls["gen-data"] = _stage(
        root, "gen-data", DATA_CFG.as_dict(), [manifest],
        lambda: build_dataset(DATA_CFG, root / "ds"),
    )
    hvae_ckpt = root / "hvae" / "hvae.pt"
    walls["train-hvae"] = _stage(
        root, "train-hvae", HVAE_CFG.as_dict(), [hvae_ckpt],
        lambda: train_hvae(manifest, HVAE_CFG, root / "hvae"),
    )
    seg_ckpt = root / "seg" / "seg.pt"
    walls["train-seg"] = _stage(
        root, "train-seg", SEG_CFG.as_dict(), [seg_ckpt],
        lambda: train_seg(manifest, SEG_CFG, root / "seg"),
    )
    clf_ckpt = root / "clf" / "classifier.pt"
    walls["train-classifier"] = _stage(
        root, "train-classifier", CLF_CFG.as_dict(), [clf_ckpt],
        lambda: clf_mod.train_classifier(manifest, CLF_CFG, clf_ckpt),
    )

    hvae_model = load_hvae(hvae_ckpt)
    seg_model = load_seg(seg_ckpt)
    classifier = clf_mod.load_classifier(clf_ckpt)

    results = root / "infer" / "results.jsonl"

    def run_infer():
        _, failures = pipeline.batch_infer(
            manifest, root / "infer", seg_model, hvae_model=hvae_model, arm="both"
        )
        assert not failures, failures

    walls["infer"] = _stage(
        root, "infer", {"arm": "both", "data": DATA_CFG.as_dict()}, [results], run_infer
    )

    report_json = root / "eval" / "report.json"
    effectiveness = clf_mod.effectiveness_from_results(classifier, [results], manifest)
    walls["evaluate"] = _stage(
        root, "evaluate", {"results": "infer"}, [report_json],
        lambda: build_report([results], manifest, root / "eval", effectiveness=effectiveness),
    )
    (root / "walls.json").write_text(json.dumps(walls))

    records = load_manifest(manifest)
    dataset = {r["id"]: r for r in records}
    test = [r for r in records if r["split"] == "test"]
    by_arm = {}
    for rec in load_manifest(results):
        by_arm.setdefault(rec["arm"], {})[rec["id"]] = rec
    return {
        "root": root,
        "manifest": manifest,
        "records": records,
        "dataset": dataset,
        "test": test,
        "diseased_test": [r for r in test if r["disease"] == 1],
        "healthy_test": [r for r in test if r["disease"] == 0],
        "anatomy": load_anatomy(root / "ds"),
        "hvae": hvae_model,
        "seg": seg_model,
        "classifier": classifier,
        "by_arm": by_arm,
        "report": json.loads(report_json.read_text()),
        "effectiveness": effectiveness,
        "walls": walls,
    }


def _mean_dice(acc, ids, arm, structure="both"):
    scores = []
    for sid in ids:
        pred = io_utils.load_mask(acc["by_arm"][arm][sid]["pred_mask_path"])
        gt = io_utils.load_mask(acc["dataset"][sid]["gt_mask_path"])
        scores.append(metrics.dice(pred, gt, structure))
    return float(np.mean(scores))


# ---------------------------------------------------------------- criteria


def test_improvement_under_disease(acceptance):
    ids = [r["id"] for r in acceptance["diseased_test"]]
    gain = {}
    for s, name in ((1, "right"), (2, "left"), ("both", "both")):
        gain[name] = _mean_dice(acceptance, ids, "cfseg", s) - _mean_dice(
            acceptance, ids, "direct", s
        )
    criterion(
        "improvement-under-disease",
        gain["both"] >= 0.03 and gain["right"] >= gain["left"],
        f"both-lungs gain {gain['both']:+.4f} (needs >= +0.03), "
        f"right {gain['right']:+.4f} vs left {gain['left']:+.4f}",
    )


def test_no_harm_on_healthy(acceptance):
    ids = [r["id"] for r in acceptance["healthy_test"]]
    direct = _mean_dice(acceptance, ids, "direct")
    cfseg = _mean_dice(acceptance, ids, "cfseg")
    criterion(
        "no-harm-on-healthy",
        cfseg >= direct - 0.02,
        f"cfseg {cfseg:.4f} vs direct {direct:.4f} (allowed drop 0.02)",
    )


def test_dv_plus_amplification(acceptance):
    dis_ids = [r["id"] for r in acceptance["diseased_test"]]
    dv_ids = [i for i in acceptance["report"]["delta_v_plus_ids"]["both"] if i in set(dis_ids)]
    assert 0 < len(dv_ids) < len(dis_ids), (
        f"dv+ subset must be a proper subset ({len(dv_ids)} of {len(dis_ids)})"
    )
    gain_all = _mean_dice(acceptance, dis_ids, "cfseg") - _mean_dice(
        acceptance, dis_ids, "direct"
    )
    gain_dv = _mean_dice(acceptance, dv_ids, "cfseg") - _mean_dice(
        acceptance, dv_ids, "direct"
    )
    criterion(
        "dv-plus-amplification",
        gain_dv > gain_all,
        f"dv+ gain {gain_dv:+.4f} vs all-diseased gain {gain_all:+.4f} "
        f"({len(dv_ids)}/{len(dis_ids)} samples)",
    )


def test_counterfactual_oracle(acceptance):
    l1_cf, l1_orig = [], []
    for rec in acceptance["diseased_test"]:
        img = io_utils.load_image(rec["image_path"])
        attrs = record_attrs(rec)
        healthy = AttributeVector(attrs.sex, attrs.scanner, 0, 0.0)
        oracle, _ = render(
            healthy, acceptance["anatomy"][rec["id"]], DATA_CFG.size, DATA_CFG.render
        )
        cf = io_utils.load_image(acceptance["by_arm"]["cfseg"][rec["id"]]["cf_image_path"])
        l1_cf.append(np.abs(cf.astype(np.float64) - oracle).mean())
        l1_orig.append(np.abs(img.astype(np.float64) - oracle).mean())
    ratio = float(np.mean(l1_cf)) / float(np.mean(l1_orig))
    eff = acceptance["effectiveness"]
    criterion(
        "counterfactual-oracle",
        ratio < 0.5 and eff["healthy_rate"] >= 0.9,
        f"L1 ratio {ratio:.3f} (needs < 0.5), "
        f"effectiveness {eff['healthy_rate']:.2%} over {eff['n']} CFs (needs >= 90%)",
    )


def test_composition(acceptance):
    scores = []
    for rec in acceptance["healthy_test"]:
        img = io_utils.load_image(rec["image_path"])
        recon = reconstruct(acceptance["hvae"], img, record_attrs(rec))
        scores.append(
            metrics.dice(segment(acceptance["seg"], recon), segment(acceptance["seg"], img), "both")
        )
    mean = float(np.mean(scores))
    criterion("composition", mean >= 0.95, f"mean Dice(seg(recon), seg(x)) = {mean:.4f}")


def test_population_volume_consistency(acceptance):
    overlaps = acceptance["report"]["overlap_scores"]
    cf, direct = overlaps["cfseg"]["right"], overlaps["direct"]["right"]
    criterion(
        "population-volume-consistency",
        cf > direct,
        f"right-lung NF-vs-diseased overlap: cfseg {cf:.3f} > direct {direct:.3f}",
    )


def test_metric_oracles_brute_force(acceptance):
    from test_metrics import set_dice, set_volume

    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(1000):
        a = rng.integers(0, 3, size=(8, 8)).astype(np.uint8)
        b = rng.integers(0, 3, size=(8, 8)).astype(np.uint8)
        for s in (1, 2, "both"):
            worst = max(worst, abs(metrics.dice(a, b, s) - set_dice(a, b, s)))
            worst = max(worst, abs(metrics.volume(a, s, 0.5) - set_volume(a, s, 0.5)))
    criterion(
        "metric-oracles-brute-force",
        worst <= 1e-12,
        f"max |dice/volume - set recomputation| = {worst:.2e} over 1000 8x8 pairs",
    )


def test_metric_oracles_gradient(acceptance):
    torch.manual_seed(0)
    cfg = HvaeConfig(
        image_size=8, level_res=(2, 4), z_channels=(4, 2), widths=(16, 12),
        stem_width=8, emb_dim=8, epochs=1,
    )
    model = HvaeModel(cfg).double()
    x = torch.rand(2, 1, 8, 8, dtype=torch.float64)
    pa = torch.tensor([[1.0, 0.0, 1.0, 0.5], [0.0, 1.0, 0.0, 0.0]], dtype=torch.float64)
    eps = [
        torch.randn(2, zc, r, r, dtype=torch.float64)
        for zc, r in zip(cfg.z_channels, cfg.level_res)
    ]
    loss = -model.elbo(x, pa, eps=eps).mean()
    loss.backward()
    rng = np.random.default_rng(3)
    params = [p for p in model.parameters() if p.grad is not None]
    coords = [
        (p, int(i))
        for p in params
        for i in rng.choice(p.numel(), size=min(2, p.numel()), replace=False)
    ]
    rng.shuffle(coords)
    h, worst = 1e-5, 0.0
    for p, i in coords[:30]:
        with torch.no_grad():
            orig = float(p.view(-1)[i])
            p.view(-1)[i] = orig + h
            lp = -model.elbo(x, pa, eps=eps).mean()
            p.view(-1)[i] = orig - h
            lm = -model.elbo(x, pa, eps=eps).mean()
            p.view(-1)[i] = orig
        fd = (float(lp) - float(lm)) / (2 * h)
        an = float(p.grad.view(-1)[i])
        if max(abs(fd), abs(an)) > 1e-7:
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an)))
    criterion(
        "metric-oracles-elbo-gradient",
        worst <= 1e-3,
        f"worst relative gradient error {worst:.2e} over 30 coordinates (tol 1e-3)",
    )


def test_silver_mask_calibration(acceptance):
    scores = [
        metrics.dice(
            io_utils.load_mask(r["silver_mask_path"]),
            io_utils.load_mask(r["gt_mask_path"]),
            "both",
        )
        for r in acceptance["records"]
        if r["disease"] == 1
    ]
    mean = float(np.mean(scores))
    criterion(
        "silver-mask-calibration",
        0.82 <= mean <= 0.92,
        f"mean Dice(silver, gt) on {len(scores)} diseased samples = {mean:.4f}",
    )


def test_runtime_budget(acceptance):
    total = sum(acceptance["walls"].values())
    criterion(
        "runtime-budget",
        total < 4 * 3600,
        f"full sequence wall time {total / 60:.1f} min (cached stages count as 0)",
    )


# ------------------------------------------- desk-scale operation examples
# (per-op examples that need trained models; asserted without criterion lines)


def test_training_elbo_improves(acceptance):
    report = json.loads((acceptance["root"] / "hvae" / "hvae_report.json").read_text())
    epochs = report["epochs"]
    assert epochs[4]["train_elbo"] > epochs[0]["train_elbo"]
    best = [e["best_val_elbo_so_far"] for e in epochs]
    assert best == sorted(best)


def test_reconstruction_l1_below_threshold(acceptance):
    # healthy validation reconstructions; threshold pinned from pilot runs
    val = [r for r in acceptance["records"] if r["split"] == "val" and r["disease"] == 0]
    errs = []
    for rec in val[:60]:
        img = io_utils.load_image(rec["image_path"])
        recon = reconstruct(acceptance["hvae"], img, record_attrs(rec))
        errs.append(np.abs(recon.astype(np.float64) - img).mean())
    assert float(np.mean(errs)) < 0.02


def test_cf_decode_darkens_lower_lungs(acceptance):
    # same latents, disease parent flipped to 0: basal lung region darkens
    lowered = 0
    for rec in acceptance["diseased_test"][:15]:
        img = io_utils.load_image(rec["image_path"])
        attrs = record_attrs(rec)
        stack = encode(acceptance["hvae"], img, attrs)
        recon = decode(acceptance["hvae"], stack, attrs)
        cf = decode(
            acceptance["hvae"], stack, AttributeVector(attrs.sex, attrs.scanner, 0, 0.0)
        )
        gt = io_utils.load_mask(acceptance["dataset"][rec["id"]]["gt_mask_path"])
        rows = np.flatnonzero((gt > 0).any(axis=1))
        lower = np.zeros_like(gt, dtype=bool)
        lower[(rows[0] + rows[-1]) // 2 :, :] = True
        lower &= gt > 0
        if cf[lower].mean() < recon[lower].mean():
            lowered += 1
    assert lowered >= 12  # overwhelming majority of diseased samples


def test_direct_seg_easier_on_healthy(acceptance):
    heal = _mean_dice(acceptance, [r["id"] for r in acceptance["healthy_test"]], "direct")
    dis = _mean_dice(acceptance, [r["id"] for r in acceptance["diseased_test"]], "direct")
    assert heal > dis


def test_seg_validation_dice_above_090(acceptance):
    report = json.loads((acceptance["root"] / "seg" / "seg_report.json").read_text())
    assert report["best_val_dice"] > 0.9


def test_arms_agree_on_healthy(acceptance):
    scores = []
    for rec in acceptance["healthy_test"]:
        direct = io_utils.load_mask(acceptance["by_arm"]["direct"][rec["id"]]["pred_mask_path"])
        cfseg = io_utils.load_mask(acceptance["by_arm"]["cfseg"][rec["id"]]["pred_mask_path"])
        scores.append(metrics.dice(direct, cfseg, "both"))
    assert float(np.mean(scores)) >= 0.95


def test_dv_plus_covers_most_diseased(acceptance):
    dis_ids = {r["id"] for r in acceptance["diseased_test"]}
    dv_both = [i for i in acceptance["report"]["delta_v_plus_ids"]["both"] if i in dis_ids]
    assert len(dv_both) > 0.7 * len(dis_ids)


def test_oracle_counterfactual_via_engine(acceptance):
    # the true-SCM engine run must reproduce the stored healthy render exactly
    rec = acceptance["diseased_test"][0]
    mech = OracleImageMechanism(
        anatomy_by_id=acceptance["anatomy"], size=DATA_CFG.size, render_cfg=DATA_CFG.render
    )
    graph = default_graph(mech)
    obs = {
        "sex": rec["sex"], "scanner": rec["scanner"], "disease": rec["disease"],
        "severity": rec["severity"], "image": io_utils.load_image(rec["image_path"]),
        "id": rec["id"],
    }
    cf = counterfactual(graph, obs, {"disease": 0, "severity": 0.0})
    expected, _ = render(
        AttributeVector(rec["sex"], rec["scanner"], 0, 0.0),
        acceptance["anatomy"][rec["id"]], DATA_CFG.size, DATA_CFG.render,
    )
    assert np.array_equal(cf["image"], expected)


# --------------------------------------------------- secondary: study protocol


def test_study_protocol(acceptance, tmp_path_factory):
    from fastapi.testclient import TestClient

    store_root = tmp_path_factory.mktemp("accept_study")
    store = study.StudyStore(store_root)
    client = TestClient(study_api.create_app(store))
    manifest = str(acceptance["manifest"])
    method_names = ("silver", "cfseg")

    def create(seed, n_nf=150, n_diseased=150):
        r = client.post(
            "/sessions",
            json={
                "rater_id": f"sim-{seed}",
                "seed": seed,
                "n_nf": n_nf,
                "n_diseased": n_diseased,
                "dataset_manifest": manifest,
                "methods": [
                    {"name": method_names[0], "manifest": manifest,
                     "mask_field": "silver_mask_path"},
                    {"name": method_names[1], "manifest": manifest,
                     "mask_field": "gt_mask_path"},
                ],
            },
        )
        assert r.status_code == 200, r.text
        return r.json()["session_id"]

    # 1) side randomization balanced over >= 1000 trials
    sids = [create(seed) for seed in range(4)]
    lefts = total = 0
    for sid in sids:
        session = store.get(sid)
        lefts += sum(t.a_side == "left" for t in session.trials)
        total += session.total
    sigma = np.sqrt(total * 0.25)
    balanced = abs(lefts - total / 2) <= 3 * sigma
    assert total >= 1000

    # 2) truth table on all four (assignment, choice) cases
    truth_ok = True
    probe = store.get(sids[0])
    cases = {("left", "left"): "a", ("left", "right"): "b",
             ("right", "left"): "b", ("right", "right"): "a"}
    seen = set()
    for trial in probe.trials:
        for choice in ("left", "right"):
            want = cases[(trial.a_side, choice)]
            got = study.Trial(**{**trial.__dict__, "choice": choice}).chosen_method_key()
            truth_ok &= got == want
            seen.add((trial.a_side, choice))
    truth_ok &= len(seen) == 4

    # 3) simulated rater prefers method B on 105/150 diseased -> 70% summary
    sid = sids[1]
    session = store.get(sid)
    diseased = [t for t in session.trials if t.group == "diseased"]
    for i, trial in enumerate(diseased):
        want = "b" if i < 105 else "a"
        choice = trial.a_side if want == "a" else ("left" if trial.a_side == "right" else "right")
        assert client.post(
            f"/sessions/{sid}/trials/{trial.index}/choice", json={"choice": choice}
        ).status_code == 200
    for trial in session.trials:
        if trial.group == "NF":
            client.post(f"/sessions/{sid}/trials/{trial.index}/choice", json={"choice": "left"})
    summary = client.get(f"/sessions/{sid}/summary").json()
    seventy = summary["groups"]["diseased"]["percent"][method_names[1]]

    # 4) blinding: no method identifiers in any client payload mid-session
    blind_ok = True
    probe_sid = sids[2]
    responses = [client.get(f"/sessions/{probe_sid}/summary")]
    for k in range(0, 40):
        responses.append(client.get(f"/sessions/{probe_sid}/trials/{k}"))
        for which in ("image", "left", "right"):
            responses.append(client.get(f"/sessions/{probe_sid}/trials/{k}/png/{which}"))
        responses.append(
            client.post(f"/sessions/{probe_sid}/trials/{k}/choice", json={"choice": "right"})
        )
        responses.append(client.get(f"/sessions/{probe_sid}/summary"))
    for resp in responses:
        payload = resp.content + json.dumps(dict(resp.headers)).encode()
        for name in method_names:
            if name.encode() in payload:
                blind_ok = False

    criterion(
        "study-protocol",
        balanced and truth_ok and abs(seventy - 70.0) < 1e-9 and blind_ok,
        f"side balance {lefts}/{total} (3-sigma {sigma * 3:.1f}), truth table "
        f"{'ok' if truth_ok else 'BROKEN'}, 105/150 -> {seventy:.1f}%, "
        f"blinding {'clean' if blind_ok else 'LEAKED'}",
    )
