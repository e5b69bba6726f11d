import numpy as np
import pytest

from cfseg.hvae import HvaeConfig, HvaeModel
from cfseg.synth_scm import (
    AttributeVector,
    DataConfig,
    build_dataset,
    load_manifest,
    sample_anatomy,
)


TINY_SIZE = 16

# one PASS/FAIL line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def tiny_hvae_config(**overrides):
    base = dict(
        image_size=TINY_SIZE,
        level_res=(4, 8),
        z_channels=(8, 4),
        widths=(32, 24),
        stem_width=12,
        emb_dim=8,
        epochs=2,
        batch_size=16,
        seed=0,
    )
    base.update(overrides)
    return HvaeConfig(**base)


def mini_hvae_config(**overrides):
    """8x8 two-level configuration used for the gradient check."""
    base = dict(
        image_size=8,
        level_res=(2, 4),
        z_channels=(4, 2),
        widths=(16, 12),
        stem_width=8,
        emb_dim=8,
        epochs=1,
        batch_size=4,
        seed=0,
    )
    base.update(overrides)
    return HvaeConfig(**base)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small 16x16 dataset shared by the integration-style tests."""
    root = tmp_path_factory.mktemp("tiny_ds")
    cfg = DataConfig(n=80, seed=7, size=TINY_SIZE, disease_prevalence=0.3)
    manifest = build_dataset(cfg, root)
    return {"config": cfg, "manifest": manifest, "root": root}


@pytest.fixture(scope="session")
def tiny_records(tiny_dataset):
    return load_manifest(tiny_dataset["manifest"])


@pytest.fixture(scope="session")
def tiny_hvae(tiny_dataset, tmp_path_factory):
    from cfseg.hvae_train import train_hvae

    out = tmp_path_factory.mktemp("tiny_hvae")
    model, report = train_hvae(tiny_dataset["manifest"], tiny_hvae_config(), out)
    return {"model": model, "report": report, "dir": out}


@pytest.fixture(scope="session")
def tiny_seg(tiny_dataset, tmp_path_factory):
    from cfseg.segmenter import SegTrainConfig, train_seg

    out = tmp_path_factory.mktemp("tiny_seg")
    cfg = SegTrainConfig(depth=2, base_channels=8, epochs=3, batch_size=16, seed=0)
    model, report = train_seg(tiny_dataset["manifest"], cfg, out)
    return {"model": model, "report": report, "dir": out, "config": cfg}


@pytest.fixture(scope="session")
def tiny_results(tiny_dataset, tiny_hvae, tiny_seg, tmp_path_factory):
    from cfseg import pipeline

    out = tmp_path_factory.mktemp("tiny_infer")
    results, failures = pipeline.batch_infer(
        tiny_dataset["manifest"], out, tiny_seg["model"],
        hvae_model=tiny_hvae["model"], arm="both",
    )
    assert not failures
    return {"results": results, "dir": out}


@pytest.fixture
def untrained_tiny_hvae():
    import torch

    torch.manual_seed(0)
    return HvaeModel(tiny_hvae_config())


@pytest.fixture
def anatomy16():
    return sample_anatomy(np.random.default_rng(0), TINY_SIZE)


def healthy_attrs(**kw):
    base = dict(sex=0, scanner=0, disease=0, severity=0.0)
    base.update(kw)
    return AttributeVector(**base)


def diseased_attrs(severity=0.5, **kw):
    base = dict(sex=0, scanner=0, disease=1, severity=severity)
    base.update(kw)
    return AttributeVector(**base)
