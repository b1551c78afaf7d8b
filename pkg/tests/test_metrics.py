"""Quality metrics against closed-form scalar oracles."""

import math

import numpy as np
import pytest

from cwic import tensor as tt
from cwic.errors import ContractError, DimensionError
from cwic.metrics import (MSSSIM_WEIGHTS, max_scales, mse, ms_ssim,
                          msssim_db, psnr)
from cwic.tensor import Tensor

from helpers import fd_max_rel_err


def _img(arr):
    return Tensor(np.asarray(arr, dtype=np.float32))


# ---------------------------------------------------------------------------
# PSNR


def test_psnr_identical_capped():
    x = np.random.default_rng(0).uniform(0, 1, (1, 3, 8, 8))
    assert psnr(x, x) == 100.0


def test_psnr_20db_exact():
    x = np.zeros((1, 1, 4, 4))
    y = np.full((1, 1, 4, 4), 0.1)
    assert abs(psnr(x, y) - 20.0) < 1e-9


def test_psnr_30db_exact():
    # mse 1e-3 built from a single differing pixel: d^2 / 16 = 1e-3
    x = np.zeros((1, 1, 4, 4))
    y = x.copy()
    y[0, 0, 0, 0] = math.sqrt(16e-3)
    assert abs(psnr(x, y) - 10.0 * math.log10(1.0 / 1e-3)) < 1e-9


def test_psnr_permutation_invariant():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, 64)
    y = rng.uniform(0, 1, 64)
    perm = rng.permutation(64)
    assert abs(psnr(x, y) - psnr(x[perm], y[perm])) < 1e-12


def test_psnr_shape_mismatch():
    with pytest.raises(DimensionError):
        psnr(np.zeros((2, 2)), np.zeros((3, 2)))


def test_mse_matches_numpy():
    rng = np.random.default_rng(2)
    a = rng.uniform(0, 1, (1, 3, 5, 5)).astype(np.float32)
    b = rng.uniform(0, 1, (1, 3, 5, 5)).astype(np.float32)
    got = mse(_img(a), _img(b)).item()
    assert abs(got - np.mean((a - b) ** 2)) < 1e-7


# ---------------------------------------------------------------------------
# dB conversions (scalar oracles)


def test_msssim_db_oracles():
    assert abs(msssim_db(0.9) - 10.0) < 1e-9
    assert abs(msssim_db(0.99) - 20.0) < 1e-9
    assert abs(msssim_db(0.999) - 30.0) < 1e-9


def test_msssim_db_saturates_at_unity():
    assert msssim_db(1.0) == pytest.approx(100.0)
    assert msssim_db(1.5) == pytest.approx(100.0)


# ---------------------------------------------------------------------------
# MS-SSIM


def test_ms_ssim_self_is_one():
    rng = np.random.default_rng(3)
    x = _img(rng.uniform(0, 1, (1, 3, 32, 32)))
    assert abs(ms_ssim(x, x).item() - 1.0) < 1e-6


def test_ms_ssim_inverted_is_low():
    rng = np.random.default_rng(4)
    x = _img(rng.uniform(0, 1, (1, 1, 32, 32)))
    inv = _img(1.0 - x.data)
    assert ms_ssim(x, inv).item() < 0.2


def test_ms_ssim_flat_patch_luminance_oracle():
    # constant images: variances vanish, cs = 1, so single-scale MS-SSIM
    # reduces to the luminance term (2ab + C1) / (a^2 + b^2 + C1)
    a, b = 0.3, 0.5
    x = Tensor(np.full((1, 1, 16, 16), a), dtype=np.float64)
    y = Tensor(np.full((1, 1, 16, 16), b), dtype=np.float64)
    c1 = 0.01 ** 2
    expect = (2 * a * b + c1) / (a * a + b * b + c1)
    got = ms_ssim(x, y, scales=1).item()
    assert abs(got - expect) < 1e-9


def test_ms_ssim_ordering_tracks_noise():
    rng = np.random.default_rng(5)
    x = _img(rng.uniform(0.2, 0.8, (1, 3, 44, 44)))
    small = _img(np.clip(x.data + rng.normal(0, 0.01, x.shape), 0, 1))
    large = _img(np.clip(x.data + rng.normal(0, 0.15, x.shape), 0, 1))
    assert ms_ssim(x, small).item() > ms_ssim(x, large).item()


def test_ms_ssim_weights_renormalized():
    # two images identical except luminance: with k scales only the last
    # (renormalized) weight touches the luminance term
    a, b = 0.3, 0.5
    x = Tensor(np.full((1, 1, 44, 44), a), dtype=np.float64)
    y = Tensor(np.full((1, 1, 44, 44), b), dtype=np.float64)
    c1 = 0.01 ** 2
    lum = (2 * a * b + c1) / (a * a + b * b + c1)
    for k in (1, 2):
        w = np.asarray(MSSSIM_WEIGHTS[:k])
        w = w / w.sum()
        got = ms_ssim(x, y, scales=k).item()
        assert abs(got - lum ** w[-1]) < 1e-9


def test_max_scales():
    assert max_scales(11, 11) == 1
    assert max_scales(44, 44) == 3
    assert max_scales(176, 352) == 5
    assert max_scales(10000, 10000) == 5  # clamped to weight count
    assert max_scales(10, 64) == 0


def test_ms_ssim_rejects_undersized():
    x = _img(np.zeros((1, 1, 8, 8)))
    with pytest.raises(ContractError):
        ms_ssim(x, x)


def test_ms_ssim_rejects_overrequested_scales():
    x = _img(np.zeros((1, 1, 16, 16)))
    with pytest.raises(ContractError):
        ms_ssim(x, x, scales=3)
    with pytest.raises(ContractError):
        ms_ssim(x, x, scales=0)


def test_ms_ssim_shape_mismatch():
    with pytest.raises(DimensionError):
        ms_ssim(_img(np.zeros((1, 1, 16, 16))), _img(np.zeros((1, 1, 16, 17))))


def test_ms_ssim_odd_dims_supported():
    rng = np.random.default_rng(6)
    x = _img(rng.uniform(0, 1, (1, 3, 45, 33)))
    v = ms_ssim(x, x).item()
    assert abs(v - 1.0) < 1e-6


def test_ms_ssim_gradient_fd():
    rng = np.random.default_rng(7)
    x = Tensor(rng.uniform(0.2, 0.8, (1, 1, 16, 16)), dtype=np.float64)
    y = Tensor(np.clip(x.data + rng.normal(0, 0.1, x.shape), 0, 1),
               dtype=np.float64, requires_grad=True)
    err = fd_max_rel_err(lambda y_: ms_ssim(x, y_, scales=1) * 1.0, [y],
                         n_coords=5)
    assert err < 1e-4
