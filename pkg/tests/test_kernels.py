"""Both kernel paths must agree bit-for-bit; dispatch follows the env flag."""

import numpy as np
import pytest

from cfseg import accel, kernels


def random_ellipses(rng, size):
    return np.array(
        [
            [rng.uniform(0.4, 0.6) * size, rng.uniform(0.2, 0.35) * size,
             rng.uniform(0.15, 0.25) * size, rng.uniform(0.1, 0.15) * size],
            [rng.uniform(0.4, 0.6) * size, rng.uniform(0.65, 0.8) * size,
             rng.uniform(0.15, 0.25) * size, rng.uniform(0.1, 0.15) * size],
        ]
    )


@pytest.mark.parametrize("size", [8, 17, 64])
def test_lung_fields_parity(size):
    rng = np.random.default_rng(size)
    ells = random_ellipses(rng, size)
    jit = kernels._lung_fields_nb(size, size, ells, 0.5)
    ref = kernels._lung_fields_np(size, size, ells, 0.5)
    for a, b in zip(jit, ref):
        assert np.array_equal(a, b)


@pytest.mark.parametrize("severity", [0.2, 0.55, 1.0])
def test_effusion_overlay_parity(severity):
    rng = np.random.default_rng(3)
    ells = random_ellipses(rng, 32)
    m_r, m_l, _ = kernels.lung_fields(32, 32, ells, 0.5)
    jit = kernels._effusion_overlay_nb(m_r, m_l, ells, severity, 0.5, 0.4)
    ref = kernels._effusion_overlay_np(m_r, m_l, ells, severity, 0.5, 0.4)
    assert np.array_equal(jit, ref)


@pytest.mark.parametrize("shape", [(8, 8), (64, 64), (33, 47)])
def test_value_noise_parity(shape):
    rng = np.random.default_rng(1)
    grid = rng.standard_normal((9, 9))
    jit = kernels._value_noise_nb(shape[0], shape[1], grid)
    ref = kernels._value_noise_np(shape[0], shape[1], grid)
    assert np.array_equal(jit, ref)


def test_value_noise_rejects_tiny_grid():
    with pytest.raises(ValueError):
        kernels.value_noise(8, 8, np.zeros((1, 5)))


def test_clip_mask_rows_parity_and_never_adds():
    rng = np.random.default_rng(5)
    mask = rng.integers(0, 3, size=(24, 24)).astype(np.uint8)
    jitter = rng.integers(-1, 1, size=24)
    jit = kernels._clip_mask_rows_nb(mask, np.uint8(1), 12, jitter)
    ref = kernels._clip_mask_rows_np(mask, 1, 12, jitter)
    assert np.array_equal(jit, ref)
    # removal only: every surviving pixel was present before
    assert np.all((jit == 0) | (jit == mask))
    assert np.array_equal(jit == 2, mask == 2)  # other label untouched


def test_overlap_counts_parity():
    rng = np.random.default_rng(9)
    a = rng.integers(0, 3, size=(16, 16)).astype(np.uint8)
    b = rng.integers(0, 3, size=(16, 16)).astype(np.uint8)
    assert np.array_equal(kernels._overlap_counts_nb(a, b), kernels._overlap_counts_np(a, b))


def test_overlap_counts_shape_mismatch():
    with pytest.raises(ValueError):
        kernels.overlap_counts(np.zeros((4, 4), np.uint8), np.zeros((4, 5), np.uint8))


def test_env_flag_switches_path(monkeypatch):
    monkeypatch.delenv(accel.ENV_FLAG, raising=False)
    assert accel.use_numba() == accel.HAVE_NUMBA
    monkeypatch.setenv(accel.ENV_FLAG, "1")
    assert not accel.use_numba()
    monkeypatch.setenv(accel.ENV_FLAG, "0")
    assert accel.use_numba() == accel.HAVE_NUMBA


def test_dispatch_same_result_under_flag(monkeypatch):
    rng = np.random.default_rng(2)
    ells = random_ellipses(rng, 16)
    with_numba = kernels.lung_fields(16, 16, ells, 0.5)
    monkeypatch.setenv(accel.ENV_FLAG, "1")
    without = kernels.lung_fields(16, 16, ells, 0.5)
    for a, b in zip(with_numba, without):
        assert np.array_equal(a, b)
