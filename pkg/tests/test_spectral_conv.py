import numpy as np
import pytest

from specreg.numerics import hermitian_mirror
from specreg.spectral_conv import (
    MaskParams,
    SpectralConv,
    binarize,
    init_mask,
    mask_percentage,
    random_drop,
    update_mask,
)

from oracles import assert_grads_close, central_diff_grad, clipped_normal_mean, conv_layer_naive, same_corr2d


# --- mask initialization -------------------------------------------------

def test_init_mask_zero_variance_is_constant():
    mask = init_mask(6, 6, 0.8, 0.0, seed=1)
    assert np.all(mask.real_values == 0.8)
    mask_hi = init_mask(4, 4, 1.7, 0.0, seed=1)
    assert np.all(mask_hi.real_values == 1.0)


def test_init_mask_entries_in_unit_interval():
    mask = init_mask(16, 16, 0.8, 0.2, seed=7)
    assert np.all(mask.real_values >= 0.0) and np.all(mask.real_values <= 1.0)


def test_init_mask_mean_matches_clipped_normal_oracle():
    mask = init_mask(64, 64, 0.8, 0.2, seed=3)
    expected = clipped_normal_mean(0.8, 0.2, seed=99)
    assert abs(float(np.mean(mask.real_values)) - expected) < 0.02


def test_init_mask_hermitian_and_deterministic():
    a = init_mask(10, 12, 0.6, 0.1, seed=11)
    b = init_mask(10, 12, 0.6, 0.1, seed=11)
    assert np.array_equal(a.real_values, b.real_values)
    assert np.array_equal(a.real_values, hermitian_mirror(a.real_values))
    assert np.all(a.momentum_buffer == 0)


def test_init_mask_negative_variance_rejected():
    with pytest.raises(ValueError):
        init_mask(4, 4, 0.5, -0.1, seed=0)


# --- binarize / percentage -----------------------------------------------

def test_binarize_thresholds():
    mask = MaskParams(np.array([[0.7, 0.49], [0.5, 0.0]]), np.zeros((2, 2)))
    assert np.array_equal(binarize(mask), [[1.0, 0.0], [1.0, 0.0]])


def test_mask_percentage_extremes():
    ones = MaskParams(np.full((4, 4), 0.9), np.zeros((4, 4)))
    zeros = MaskParams(np.full((4, 4), 0.1), np.zeros((4, 4)))
    assert mask_percentage(ones) == 0.0
    assert mask_percentage(zeros) == 1.0


def test_mask_percentage_report_row_format():
    mask = MaskParams(np.where(np.random.default_rng(0).random((8, 8)) < 0.7, 0.9, 0.1),
                      np.zeros((8, 8)))
    row = f"layer1conv1.1, {mask_percentage(mask):.4f}"
    assert row.startswith("layer1conv1.1, 0.") and len(row.split(", ")[1]) == 6


# --- forward --------------------------------------------------------------

def test_identity_kernel_with_open_mask_is_identity():
    layer = SpectralConv(1, 1, 3, (6, 6), mask_enabled=False, dtype=np.float64)
    layer.params["w"][:] = 0.0
    layer.params["w"][0, 0, 1, 1] = 1.0  # centered delta
    layer.params["b"][0] = 0.25
    x = np.random.default_rng(0).standard_normal((2, 1, 6, 6))
    y = layer.forward(x, train=False)
    assert np.max(np.abs(y - (x + 0.25))) < 1e-10


def test_fully_masked_spectrum_outputs_bias():
    layer = SpectralConv(2, 3, 3, (5, 5), mask_enabled=True,
                         mask_init_mean=0.0, mask_init_variance=0.0, dtype=np.float64)
    layer.params["b"][:] = [1.0, -2.0, 0.5]
    x = np.random.default_rng(1).standard_normal((2, 2, 5, 5))
    y = layer.forward(x, train=False)
    assert np.max(np.abs(y - layer.params["b"][None, :, None, None])) < 1e-6


def test_forward_matches_masked_naive_oracle_single_channel():
    layer = SpectralConv(1, 1, 3, (8, 8), mask_enabled=True, mask_init_mean=0.5,
                         mask_init_variance=0.3, weight_seed=2, mask_seed=5)
    x = np.random.default_rng(2).standard_normal((1, 1, 8, 8)).astype(np.float32)
    y = layer.forward(x, train=False)
    ref = conv_layer_naive(
        x[0].astype(np.float64), layer.params["w"].astype(np.float64),
        layer.params["b"].astype(np.float64), binarize(layer.mask),
    )
    assert np.max(np.abs(y[0] - ref)) < 1e-4


def test_forward_matches_masked_naive_oracle_multichannel_strided():
    layer = SpectralConv(2, 3, 5, (6, 8), stride=2, mask_enabled=True, mask_init_mean=0.55,
                         mask_init_variance=0.2, weight_seed=4, mask_seed=6, dtype=np.float64)
    x = np.random.default_rng(3).standard_normal((2, 2, 6, 8))
    y = layer.forward(x, train=False)
    for b in range(2):
        ref = conv_layer_naive(x[b], layer.params["w"], layer.params["b"],
                               binarize(layer.mask), stride=2)
        assert np.max(np.abs(y[b] - ref)) < 1e-10
    assert y.shape == (2, 3, 3, 4)


@pytest.mark.parametrize("hw,k", [((7, 7), 3), ((16, 16), 3), ((16, 16), 5), ((9, 13), 5)])
def test_open_mask_equals_spatial_cross_correlation(hw, k):
    layer = SpectralConv(1, 1, k, hw, mask_enabled=False, weight_seed=8, dtype=np.float64)
    x = np.random.default_rng(4).standard_normal((1, 1) + hw)
    y = layer.forward(x, train=False)
    ref = same_corr2d(x[0, 0], layer.params["w"][0, 0])
    assert np.max(np.abs(y[0, 0] - ref)) < 1e-4


def test_forward_output_real_residual_small():
    layer = SpectralConv(3, 4, 5, (12, 12), mask_enabled=True, mask_init_mean=0.6,
                         mask_init_variance=0.25, weight_seed=9, mask_seed=10)
    x = np.random.default_rng(5).standard_normal((2, 3, 12, 12)).astype(np.float32)
    layer.forward(x, train=False)
    assert layer.cache.imag_residual < 1e-5


def test_forward_shape_mismatch_rejected():
    layer = SpectralConv(2, 2, 3, (6, 6))
    with pytest.raises(ValueError):
        layer.forward(np.zeros((1, 2, 5, 6), dtype=np.float32))
    with pytest.raises(ValueError):
        layer.forward(np.zeros((1, 3, 6, 6), dtype=np.float32))


# --- backward -------------------------------------------------------------

def _half_sq_loss(layer, x, train=False):
    def loss():
        y = layer.forward(x.copy(), train=train)
        return 0.5 * float(np.sum(y.astype(np.float64) ** 2))
    return loss


def test_zero_upstream_gradient_gives_zero_grads():
    layer = SpectralConv(2, 2, 3, (5, 5), mask_enabled=True, dtype=np.float64)
    x = np.random.default_rng(6).standard_normal((2, 2, 5, 5))
    y = layer.forward(x, train=False)
    dx = layer.backward(np.zeros_like(y))
    assert np.all(dx == 0)
    assert np.all(layer.grads["w"] == 0) and np.all(layer.grads["b"] == 0)
    assert np.all(layer.dmask == 0)


@pytest.mark.parametrize("dtype,h,rtol", [(np.float32, 1e-3, 1e-3), (np.float64, 1e-5, 1e-6)])
def test_all_gradients_match_fd_with_binarize_identity(dtype, h, rtol):
    layer = SpectralConv(2, 3, 3, (5, 6), mask_enabled=True, mask_init_mean=0.5,
                         mask_init_variance=0.3, weight_seed=2, mask_seed=4, dtype=dtype)
    layer.binarize_identity = True
    x = np.random.default_rng(11).standard_normal((2, 2, 5, 6)).astype(dtype)
    loss = _half_sq_loss(layer, x)

    y = layer.forward(x.copy(), train=False)
    dx = layer.backward(y.astype(np.float64))

    assert_grads_close(layer.grads["w"], central_diff_grad(loss, layer.params["w"], h), rtol, "w")
    assert_grads_close(layer.grads["b"], central_diff_grad(loss, layer.params["b"], h), rtol, "b")
    assert_grads_close(layer.dmask, central_diff_grad(loss, layer.mask.real_values, h), rtol, "mask")
    assert_grads_close(dx, central_diff_grad(loss, x, h), rtol, "x")


def test_weight_and_input_gradients_match_fd_with_binarization_active():
    layer = SpectralConv(2, 2, 3, (6, 5), mask_enabled=True, mask_init_mean=0.55,
                         mask_init_variance=0.25, weight_seed=3, mask_seed=8, dtype=np.float64)
    x = np.random.default_rng(12).standard_normal((2, 2, 6, 5))
    loss = _half_sq_loss(layer, x)

    y = layer.forward(x.copy(), train=False)
    dx = layer.backward(y.astype(np.float64))

    assert_grads_close(layer.grads["w"], central_diff_grad(loss, layer.params["w"], 1e-5), 1e-6, "w")
    assert_grads_close(dx, central_diff_grad(loss, x, 1e-5), 1e-6, "x")
    assert layer.dmask.dtype == np.float64  # real-valued accumulation


def test_strided_gradients_match_fd():
    layer = SpectralConv(1, 2, 3, (6, 6), stride=2, mask_enabled=True, mask_init_mean=0.6,
                         mask_init_variance=0.2, weight_seed=5, mask_seed=7, dtype=np.float64)
    layer.binarize_identity = True
    x = np.random.default_rng(13).standard_normal((1, 1, 6, 6))
    loss = _half_sq_loss(layer, x)
    y = layer.forward(x.copy(), train=False)
    dx = layer.backward(y.astype(np.float64))
    assert_grads_close(layer.grads["w"], central_diff_grad(loss, layer.params["w"], 1e-5), 1e-6, "w")
    assert_grads_close(layer.dmask, central_diff_grad(loss, layer.mask.real_values, 1e-5), 1e-6, "m")
    assert_grads_close(dx, central_diff_grad(loss, x, 1e-5), 1e-6, "x")


def test_backward_shape_mismatch_rejected():
    layer = SpectralConv(1, 1, 3, (6, 6))
    layer.forward(np.zeros((2, 1, 6, 6), dtype=np.float32))
    with pytest.raises(ValueError):
        layer.backward(np.zeros((2, 1, 5, 6)))


# --- mask update ----------------------------------------------------------

def test_update_mask_zero_gradient_is_noop():
    mask = init_mask(6, 6, 0.7, 0.1, seed=2)
    before = mask.real_values.copy()
    update_mask(mask, np.zeros((6, 6)), lr=0.5, momentum=0.0)
    assert np.array_equal(mask.real_values, before)


def test_update_mask_clips_at_one():
    mask = MaskParams(np.full((2, 2), 0.95), np.zeros((2, 2)))
    update_mask(mask, np.full((2, 2), -0.2), lr=1.0, momentum=0.0)
    assert np.all(mask.real_values == 1.0)


def test_update_mask_keeps_entries_in_unit_interval_and_symmetric():
    mask = init_mask(8, 10, 0.5, 0.2, seed=5)
    rng = np.random.default_rng(6)
    for _ in range(20):
        update_mask(mask, rng.standard_normal((8, 10)), lr=0.3, momentum=0.9)
        assert np.all(mask.real_values >= 0.0) and np.all(mask.real_values <= 1.0)
        assert np.max(np.abs(mask.real_values - hermitian_mirror(mask.real_values))) < 1e-7


def test_update_mask_shape_mismatch_rejected():
    mask = init_mask(4, 4, 0.5, 0.0, seed=0)
    with pytest.raises(ValueError):
        update_mask(mask, np.zeros((3, 4)), lr=0.1, momentum=0.0)


# --- random drop ----------------------------------------------------------

def test_random_drop_p_zero_is_identity():
    mask = binarize(init_mask(12, 12, 0.6, 0.2, seed=3))
    assert np.array_equal(random_drop(mask, 0.0, seed=1), mask)


def test_random_drop_p_one_clears_everything():
    assert np.all(random_drop(np.ones((8, 8)), 1.0, seed=2) == 0.0)


def test_random_drop_survival_fraction_within_3_sigma():
    p = 0.2
    m = n = 64
    mask = np.ones((m, n))
    dropped = random_drop(mask, p, seed=7)
    # mirror pairs share one draw, so the effective sample count is the orbit count
    rows = np.arange(m).reshape(-1, 1)
    cols = np.arange(n).reshape(1, -1)
    orbits = int(np.sum((rows < (-rows) % m) | ((rows == (-rows) % m) & (cols <= (-cols) % n))))
    sigma = np.sqrt(p * (1 - p) / orbits)
    surviving = float(np.mean(dropped))
    assert abs(surviving - (1 - p)) < 3 * sigma


def test_random_drop_keeps_hermitian_symmetry():
    mask = binarize(init_mask(10, 14, 0.6, 0.2, seed=9))
    dropped = random_drop(mask, 0.3, seed=4)
    assert np.array_equal(dropped, hermitian_mirror(dropped))
    # zeros stay zeros
    assert np.all(dropped[mask == 0.0] == 0.0)


def test_random_drop_deterministic_per_seed():
    mask = np.ones((16, 16))
    assert np.array_equal(random_drop(mask, 0.4, seed=5), random_drop(mask, 0.4, seed=5))
    assert not np.array_equal(random_drop(mask, 0.4, seed=5), random_drop(mask, 0.4, seed=6))


def test_random_drop_rejects_bad_probability():
    with pytest.raises(ValueError):
        random_drop(np.ones((4, 4)), 1.5, seed=0)


def test_layer_applies_drop_only_in_training():
    layer = SpectralConv(1, 1, 3, (8, 8), mask_enabled=True, mask_init_mean=0.9,
                         mask_init_variance=0.0, random_drop_p=0.5, drop_seed=3, dtype=np.float64)
    x = np.random.default_rng(10).standard_normal((1, 1, 8, 8))
    layer.forward(x, train=False)
    assert np.all(layer.cache.mask_binary == 1.0)  # eval never drops
    layer.forward(x, train=True)
    assert np.any(layer.cache.mask_binary == 0.0)
    assert layer.cache.imag_residual < 1e-5  # dropped mask stays a real operator
