import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_diff, rel_err
from skelbench import tensor_nn as nn
from skelbench.errors import ChannelCountError, InvalidConfigError, OddSpatialDimsError, ShapeMismatchError

seeds = st.integers(0, 2 ** 32 - 1)


def naive_conv(x, w, b):
    n, c, h, wd = x.shape
    oc, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, oc, h, wd))
    for i in range(h):
        for j in range(wd):
            patch = xp[:, :, i:i + k, j:j + k]
            out[:, :, i, j] = np.tensordot(patch, w, axes=([1, 2, 3], [1, 2, 3])) + b
    return out


def naive_pool(x):
    n, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
    out = np.zeros((n, c, h // 2, wd // 2))
    for i in range(h // 2):
        for j in range(wd // 2):
            out[:, :, i, j] = xp[:, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3].max(axis=(2, 3))
    return out


def test_conv_hand_values():
    x = np.ones((1, 1, 3, 3))
    w = np.ones((1, 1, 3, 3))
    out, _ = nn.conv2d(x, w, np.zeros(1))
    assert out[0, 0, 1, 1] == 9.0
    assert out[0, 0, 0, 0] == out[0, 0, 2, 2] == 4.0
    assert out[0, 0, 0, 1] == 6.0


def test_conv_identity_kernel():
    x = np.random.default_rng(0).standard_normal((2, 1, 5, 6))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1
    assert np.array_equal(nn.conv2d(x, w, np.zeros(1))[0], x)


@settings(max_examples=15)
@given(seeds, st.sampled_from([1, 3]))
def test_conv_matches_naive(seed, k):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 5, 4))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    assert np.allclose(nn.conv2d(x, w, b)[0], naive_conv(x, w, b), atol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(ShapeMismatchError):
        nn.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))
    with pytest.raises(ShapeMismatchError):
        nn.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 2, 3, 3)), np.zeros(2))


def _check(fwd, bwd, inputs, seed):
    """Analytic vs central differences for every input of fwd; returns the worst error."""
    rng = np.random.default_rng(seed)
    out, cache = fwd(*inputs)
    g = rng.standard_normal(out.shape)
    grads = bwd(g, cache)
    grads = grads if isinstance(grads, tuple) else (grads,)
    worst = 0.0
    for x, a in zip(inputs, grads):
        num = central_diff(lambda: float(np.sum(g * fwd(*inputs)[0])), x)
        worst = max(worst, rel_err(a, num))
    return worst


@pytest.mark.parametrize("seed", range(3))
def test_conv_grad(seed):
    rng = np.random.default_rng(seed)
    args = [rng.standard_normal((2, 2, 4, 5)), rng.standard_normal((3, 2, 3, 3)),
            rng.standard_normal(3)]
    assert _check(nn.conv2d, nn.conv2d_backward, args, seed) < 1e-7


def test_transposed_single_tap_and_linearity():
    y, _ = nn.transposed_conv2d(np.ones((1, 1, 1, 1)), np.ones((1, 1, 2, 2)))
    assert y.shape == (1, 1, 2, 2) and np.all(y == 1)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 3, 4))
    w = rng.standard_normal((3, 2, 2, 2))
    assert np.allclose(nn.transposed_conv2d(2.5 * x, w)[0], 2.5 * nn.transposed_conv2d(x, w)[0])


def test_transposed_is_adjoint_of_strided_conv():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 2, 3, 3))
    w = rng.standard_normal((2, 3, 2, 2))
    y = rng.standard_normal((1, 3, 6, 6))
    # <T x, y> = <x, S y> with S the 2x2 stride-2 convolution using the same kernel
    s = np.zeros_like(x)
    for i in range(3):
        for j in range(3):
            s[0, :, i, j] = np.einsum("oab,coab->c", y[0, :, 2 * i:2 * i + 2, 2 * j:2 * j + 2], w)
    assert np.isclose(np.sum(nn.transposed_conv2d(x, w)[0] * y), np.sum(x * s))


@pytest.mark.parametrize("seed", range(3))
def test_transposed_grad(seed):
    rng = np.random.default_rng(seed)
    args = [rng.standard_normal((2, 3, 2, 3)), rng.standard_normal((3, 2, 2, 2))]
    assert _check(nn.transposed_conv2d, nn.transposed_conv2d_backward, args, seed) < 1e-7


def test_pool_constant_and_spike():
    out, _ = nn.maxpool2d(np.full((1, 2, 4, 6), 3.5))
    assert out.shape == (1, 2, 2, 3) and np.all(out == 3.5)
    x = np.zeros((1, 1, 4, 4))
    x[0, 0, 1, 1] = 9
    out, _ = nn.maxpool2d(x)
    # windows are rows/cols {-1,0,1} and {1,2,3}: (1,1) lies in all four
    assert np.all(out[0, 0] == 9)


def test_pool_matches_naive_and_errors():
    x = np.random.default_rng(0).standard_normal((2, 3, 6, 8))
    assert np.array_equal(nn.maxpool2d(x)[0], naive_pool(x))
    with pytest.raises(OddSpatialDimsError):
        nn.maxpool2d(np.zeros((1, 1, 5, 4)))


def test_pool_gradient_mass_counts_windows():
    x = np.zeros((1, 1, 4, 4))
    x[0, 0, 1, 1] = 9
    out, cache = nn.maxpool2d(x)
    dx = nn.maxpool2d_backward(np.ones_like(out), cache)
    assert dx[0, 0, 1, 1] == 4 and dx.sum() == 4


def test_pool_tie_goes_to_first():
    x = np.ones((1, 1, 2, 2))
    out, cache = nn.maxpool2d(x)
    dx = nn.maxpool2d_backward(np.ones_like(out), cache)
    # the single window covers rows/cols -1..1; first in-frame maximum is (0, 0)
    assert dx[0, 0].tolist() == [[1, 0], [0, 0]]


@pytest.mark.parametrize("seed", range(3))
def test_pool_grad(seed):
    x = np.random.default_rng(seed).permutation(64).reshape(1, 1, 8, 8) * 0.1
    assert _check(nn.maxpool2d, nn.maxpool2d_backward, [x.astype(float)], seed) < 1e-7


def test_relu_cases():
    assert np.all(nn.relu(-np.ones(5) - 1)[0] == 0)
    x = np.arange(1.0, 6.0)
    assert np.array_equal(nn.relu(x)[0], x)
    assert nn.relu_backward(np.ones(3), np.array([-1.0, 0.0, 2.0])).tolist() == [0, 0, 1]
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 2, 3, 3))
    x[np.abs(x) < 0.05] = 0.5
    assert _check(nn.relu, nn.relu_backward, [x], 0) < 1e-6


def test_softmax_values():
    p, _ = nn.softmax2(np.zeros((1, 2, 2, 2)))
    assert np.all(p == 0.5)
    z = np.zeros((1, 2, 1, 1))
    z[0, 0], z[0, 1] = 20, -20
    p, _ = nn.softmax2(z)
    assert p[0, 0, 0, 0] == pytest.approx(1) and p[0, 1, 0, 0] == pytest.approx(0, abs=1e-15)
    big = np.full((1, 2, 1, 1), 1e4)
    assert np.all(np.isfinite(nn.softmax2(big)[0]))
    with pytest.raises(ChannelCountError):
        nn.softmax2(np.zeros((1, 3, 2, 2)))


@settings(max_examples=30)
@given(seeds)
def test_softmax_rows_sum_to_one(seed):
    z = np.random.default_rng(seed).standard_normal((2, 2, 4, 4))
    p, _ = nn.softmax2(z.astype(np.float32))
    assert np.all((p > 0) & (p < 1))
    # large gaps saturate to exactly 0/1 in float32 but still sum to 1
    p, _ = nn.softmax2((z * 40).astype(np.float32))
    assert np.allclose(p.sum(axis=1), 1, atol=1e-6)


def test_literal_loss_values():
    cfg = nn.LossConfig((1, 25), "literal")
    probs = np.zeros((1, 2, 1, 1))
    probs[0, 1] = 1.0
    assert nn.weighted_loss(probs, np.ones((1, 1, 1), bool), cfg)[0] == -24.0
    probs = np.zeros((1, 2, 1, 1))
    probs[0, 0] = 1.0
    assert nn.weighted_loss(probs, np.zeros((1, 1, 1), bool), cfg)[0] == 0.0


def test_literal_loss_is_affine():
    cfg = nn.LossConfig((1, 25), "literal")
    t = np.ones((1, 1, 1), bool)
    p = np.array([0.2, 0.8]).reshape(1, 2, 1, 1)
    half = np.array([0.6, 0.4]).reshape(1, 2, 1, 1)
    diff = nn.weighted_loss(half, t, cfg)[0] - nn.weighted_loss(p, t, cfg)[0]
    assert diff == pytest.approx(25 / 2 * 0.8)


def test_wcce_value():
    p = np.array([0.3, 0.7]).reshape(1, 2, 1, 1)
    loss, _ = nn.weighted_loss(p, np.ones((1, 1, 1), bool))
    assert loss == pytest.approx(-25 * np.log(0.7 + 1e-12))


def test_loss_config_validation():
    with pytest.raises(InvalidConfigError):
        nn.LossConfig((0, 25))
    with pytest.raises(ValueError):
        nn.LossConfig(mode="focal")
    with pytest.raises(ShapeMismatchError):
        nn.weighted_loss(np.full((1, 2, 2, 2), 0.5), np.zeros((1, 3, 3), bool))


@pytest.mark.parametrize("mode", ["literal", "wcce"])
def test_softmax_loss_composite_grad(mode):
    rng = np.random.default_rng(4)
    z = rng.standard_normal((2, 2, 3, 3))
    t = rng.random((2, 3, 3)) < 0.3
    cfg = nn.LossConfig((1, 25), mode)

    def fwd(z):
        p, pc = nn.softmax2(z)
        loss, lc = nn.weighted_loss(p, t, cfg)
        return np.array(loss), (pc, lc)

    def bwd(d, cache):
        pc, lc = cache
        return nn.softmax2_backward(nn.weighted_loss_backward(float(d), lc), pc)

    assert _check(fwd, bwd, [z], 0) < 1e-6


def test_adam_zero_grad_is_identity():
    params = {"a": np.array([1.0, -2.0])}
    nn.adam_step(params, {"a": np.zeros(2)}, nn.AdamState())
    assert params["a"].tolist() == [1.0, -2.0]


def test_adam_first_step():
    params = {"a": np.array([0.5])}
    state = nn.AdamState(lr=1e-3, eps=1e-8)
    nn.adam_step(params, {"a": np.array([1.0])}, state)
    assert params["a"][0] == pytest.approx(0.5 - 1e-3 / (1 + 1e-8), abs=1e-15)
    assert state.t == 1 and state.m["a"][0] == pytest.approx(0.1)


def test_adam_descends_quadratic():
    params = {"x": np.array([3.0])}
    state = nn.AdamState(lr=0.1)
    losses = []
    for _ in range(3):
        losses.append(float(params["x"][0] ** 2))
        nn.adam_step(params, {"x": 2 * params["x"]}, state)
    assert losses[2] < losses[1] < losses[0]


def test_adam_validation():
    with pytest.raises(InvalidConfigError):
        nn.AdamState(beta1=1.0)
    with pytest.raises(ShapeMismatchError):
        nn.adam_step({"a": np.zeros(2)}, {"a": np.zeros(3)}, nn.AdamState())


def test_grad_check_harness():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 3))
    lin_f = lambda x: (a @ x, None)
    lin_b = lambda d, c: a.T @ d
    assert nn.grad_check(lin_f, lin_b, [rng.standard_normal((3, 2))]) < 1e-8
    args = [rng.standard_normal((1, 2, 4, 4)), rng.standard_normal((2, 2, 3, 3)),
            rng.standard_normal(2)]
    assert nn.grad_check(nn.conv2d, nn.conv2d_backward, args) < 1e-4

    def broken(d, cache):
        dx, dw, db = nn.conv2d_backward(d, cache)
        return dx * 1.5, dw, db

    assert nn.grad_check(nn.conv2d, broken, args) > 1e-2


def test_he_uniform_bounds():
    w = nn.he_uniform(np.random.default_rng(0), (8, 4, 3, 3), 36)
    assert w.dtype == np.float32 and np.abs(w).max() <= np.sqrt(6 / 36)
