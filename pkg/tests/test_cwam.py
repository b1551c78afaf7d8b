"""Window attention stage: partitions, coarse blocks, attention math."""

import math

import numpy as np
import pytest

from cwic import tensor as tt
from cwic.cwam import (Cwam, attention_core, downscale_half,
                       extract_coarse_blocks, merge_windows,
                       partition_windows)
from cwic.errors import ConfigError, ContractError, DimensionError
from cwic.tensor import Tensor

from helpers import cast_params_f64, fd_max_rel_err


# ---------------------------------------------------------------------------
# partition / merge


def test_merge_inverts_partition_bit_exact():
    rng = np.random.default_rng(0)
    f = Tensor(rng.normal(size=(2, 3, 8, 12)).astype(np.float32))
    wins, _ = partition_windows(f, 4)
    back = merge_windows(wins, 2, 3, 8, 12, 4)
    np.testing.assert_array_equal(back.data, f.data)


def test_partition_counts_and_token_length():
    f = Tensor(np.zeros((1, 5, 16, 16), dtype=np.float32))
    wins, (nh, nw) = partition_windows(f, 4)
    assert (nh, nw) == (4, 4)
    assert wins.shape == (16, 16, 5)


def test_partition_window_equals_extent_degenerate():
    rng = np.random.default_rng(1)
    f = Tensor(rng.normal(size=(1, 2, 4, 4)).astype(np.float32))
    wins, (nh, nw) = partition_windows(f, 4)
    assert (nh, nw) == (1, 1)
    # the single window is the whole map in row-major token order
    np.testing.assert_array_equal(
        wins.data[0], f.data[0].reshape(2, 16).T)


def test_partition_rejects_misaligned():
    f = Tensor(np.zeros((1, 2, 10, 8), dtype=np.float32))
    with pytest.raises(ContractError):
        partition_windows(f, 4)


# ---------------------------------------------------------------------------
# downscale


def test_downscale_constant():
    f = Tensor(np.full((1, 2, 8, 8), 1.25, dtype=np.float32))
    g = downscale_half(f)
    assert g.shape == (1, 2, 4, 4)
    np.testing.assert_allclose(g.data, 1.25, rtol=1e-6)


def test_downscale_checkerboard_averages():
    f = np.indices((6, 6)).sum(axis=0) % 2
    g = downscale_half(Tensor(f[None, None].astype(np.float32)))
    np.testing.assert_allclose(g.data, 0.5, rtol=1e-6)


def test_downscale_odd_rejected():
    with pytest.raises(DimensionError):
        downscale_half(Tensor(np.zeros((1, 1, 7, 8), dtype=np.float32)))


# ---------------------------------------------------------------------------
# coarse block extraction


def test_extract_coarse_blocks_ramp_oracle():
    # 8x8 ramp, window 4: half map is 4x4; block (i,j) must equal the
    # reflection-padded half map sliced at stride 2 with the first
    # position dropped per axis
    f = Tensor(np.arange(64, dtype=np.float32).reshape(1, 1, 8, 8))
    half = downscale_half(f)
    blocks = extract_coarse_blocks(half, 4)
    assert blocks.shape == (4, 16, 1)
    padded = np.pad(half.data[0, 0], 2, mode="reflect")
    for i in range(2):
        for j in range(2):
            expect = padded[2 * i + 2:2 * i + 6, 2 * j + 2:2 * j + 6]
            got = blocks.data[i * 2 + j, :, 0].reshape(4, 4)
            np.testing.assert_array_equal(got, expect)


def test_extract_coarse_blocks_misaligned_rejected():
    with pytest.raises(ContractError):
        extract_coarse_blocks(Tensor(np.zeros((1, 1, 5, 4), dtype=np.float32)), 4)


def test_extract_coarse_blocks_bad_window():
    f = Tensor(np.zeros((1, 1, 4, 4), dtype=np.float32))
    with pytest.raises(ConfigError):
        extract_coarse_blocks(f, 3)


# ---------------------------------------------------------------------------
# attention core


def test_attention_uniform_weights_average_values():
    q = Tensor(np.zeros((1, 1, 1), dtype=np.float32))
    k = Tensor(np.zeros((1, 2, 1), dtype=np.float32))
    v = Tensor(np.array([[[1.0], [3.0]]], dtype=np.float32))
    out, w = attention_core(q, k, v, heads=1)
    assert abs(out.item() - 2.0) < 1e-6
    np.testing.assert_allclose(w.data[0, 0, 0], [0.5, 0.5], rtol=1e-6)


def test_attention_hand_oracle():
    # scores q*k/sqrt(d) with d=1: [0, 2] -> softmax -> e^2/(1+e^2) on v=1
    q = Tensor(np.array([[[2.0]]], dtype=np.float32))
    k = Tensor(np.array([[[0.0], [1.0]]], dtype=np.float32))
    v = Tensor(np.array([[[0.0], [1.0]]], dtype=np.float32))
    out, _ = attention_core(q, k, v, heads=1)
    expect = math.exp(2.0) / (1.0 + math.exp(2.0))
    assert abs(out.item() - expect) < 1e-6


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(2)
    q = Tensor(rng.normal(size=(3, 5, 8)).astype(np.float32))
    k = Tensor(rng.normal(size=(3, 7, 8)).astype(np.float32))
    v = Tensor(rng.normal(size=(3, 7, 8)).astype(np.float32))
    out, w = attention_core(q, k, v, heads=4)
    assert out.shape == (3, 5, 8)
    assert w.shape == (3, 4, 5, 7)
    np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, rtol=1e-5)


def test_attention_constant_values_pass_through():
    rng = np.random.default_rng(3)
    q = Tensor(rng.normal(size=(2, 4, 6)).astype(np.float32))
    k = Tensor(rng.normal(size=(2, 9, 6)).astype(np.float32))
    v = Tensor(np.tile(np.arange(6, dtype=np.float32), (2, 9, 1)))
    out, _ = attention_core(q, k, v, heads=2)
    np.testing.assert_allclose(out.data, v.data[:, :4, :], rtol=1e-5)


def test_attention_head_divisibility():
    q = Tensor(np.zeros((1, 2, 6), dtype=np.float32))
    with pytest.raises(ConfigError):
        attention_core(q, q, q, heads=4)


# ---------------------------------------------------------------------------
# full stage


def test_cwam_constructor_validation():
    with pytest.raises(ConfigError):
        Cwam(8, window=3)
    with pytest.raises(ConfigError):
        Cwam(6, window=4, heads=4)


def test_cwam_channel_mismatch_rejected():
    m = Cwam(8, window=4, heads=2)
    with pytest.raises(DimensionError):
        m(Tensor(np.zeros((1, 4, 8, 8), dtype=np.float32)))


def test_cwam_zero_values_residual_identity():
    m = Cwam(4, window=4, heads=2, rng=np.random.default_rng(4))
    m.wv.data[...] = 0.0
    rng = np.random.default_rng(5)
    f = Tensor(rng.normal(size=(1, 4, 8, 8)).astype(np.float32))
    np.testing.assert_array_equal(m(f).data, f.data)


def test_cwam_preserves_shape_aligned():
    m = Cwam(32, window=4, heads=4, rng=np.random.default_rng(6))
    f = Tensor(np.random.default_rng(7).normal(size=(1, 32, 24, 40))
               .astype(np.float32))
    assert m(f).shape == (1, 32, 24, 40)


@pytest.mark.parametrize("h,w", [(2, 2), (3, 5), (5, 4), (7, 9), (4, 2)])
def test_cwam_preserves_shape_unaligned(h, w):
    m = Cwam(4, window=4, heads=2, rng=np.random.default_rng(8))
    f = Tensor(np.random.default_rng(9).normal(size=(1, 4, h, w))
               .astype(np.float32))
    assert m(f).shape == (1, 4, h, w)


def test_cwam_gradient_fd():
    m = Cwam(4, window=4, heads=2, rng=np.random.default_rng(10))
    cast_params_f64(m)
    rng = np.random.default_rng(11)
    f = Tensor(rng.normal(size=(1, 4, 8, 8)), dtype=np.float64,
               requires_grad=True)
    params = [f] + [p for _, p in m.named_params()]
    err = fd_max_rel_err(lambda *_: (m(f) ** 2).sum(), params, n_coords=3)
    assert err < 1e-4
