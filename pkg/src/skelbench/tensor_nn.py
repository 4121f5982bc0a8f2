"""Hand-written forward/backward kernels for a small U-Net.

Tensors are numpy arrays laid out ``[batch, channel, height, width]``. Every
forward function returns ``(output, cache)`` and has a matching ``*_backward``
taking the upstream gradient and the cache. Kernels follow the dtype of their
inputs: float32 for training, float64 for gradient checks.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import (ChannelCountError, InvalidConfigError,
                     OddSpatialDimsError, ShapeMismatchError)
from .validation import check_tensor

LOG_EPS = 1e-12


# -- convolution ---------------------------------------------------------

def _im2col(xc, k):
    """Columns ``[c*k*k, n*h*w]`` from a channel-major ``[c, n, h, w]`` array.

    Out-of-frame taps stay zero, which is the same-size zero padding.
    """
    c, n, h, wd = xc.shape
    if k == 1:
        return xc.reshape(c, -1)
    p = k // 2
    cols = np.zeros((c, k, k, n, h, wd), dtype=xc.dtype)
    for i in range(k):
        di = i - p
        for j in range(k):
            dj = j - p
            cols[:, i, j, :, max(0, -di):h - max(0, di), max(0, -dj):wd - max(0, dj)] = \
                xc[:, :, max(0, di):h - max(0, -di), max(0, dj):wd - max(0, -dj)]
    return cols.reshape(c * k * k, n * h * wd)


def conv2d(x, w, b):
    """Stride-1 cross-correlation with ``k // 2`` zero padding (same size output).

    ``w`` is ``[out_c, in_c, k, k]`` with odd ``k``; ``b`` is ``[out_c]``.
    """
    x = check_tensor(x)
    w = check_tensor(w, name="weights")
    n, c, h, wd = x.shape
    oc, ic, k, k2 = w.shape
    if ic != c or k != k2 or k % 2 == 0 or b.shape != (oc,):
        raise ShapeMismatchError(
            f"conv2d: input {x.shape}, weights {w.shape}, bias {b.shape}")
    # channel-major layout keeps the im2col copy on contiguous rows
    cols = _im2col(np.ascontiguousarray(x.transpose(1, 0, 2, 3)), k)
    out = w.reshape(oc, -1) @ cols
    out += b[:, None]
    out = out.reshape(oc, n, h, wd).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out), (x.shape, cols, w)


def conv2d_backward(dout, cache):
    """Gradients ``(dx, dw, db)`` of a conv2d.

    The input gradient is itself a same-padded convolution of ``dout`` with
    the kernel rotated by 180 degrees and its channel axes swapped.
    """
    xshape, cols, w = cache
    n, c, h, wd = xshape
    oc, _, k, _ = w.shape
    dc = np.ascontiguousarray(dout.transpose(1, 0, 2, 3))
    dflat = dc.reshape(oc, -1)
    dw = (dflat @ cols.T).reshape(w.shape)
    db = dflat.sum(axis=1)
    flipped = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, -1)
    dx = (flipped @ _im2col(dc, k)).reshape(c, n, h, wd).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(dx), dw, db


def transposed_conv2d(x, w):
    """2x2 stride-2 transposed convolution; ``w`` is ``[in_c, out_c, 2, 2]``.

    Each input pixel spreads into its own 2x2 output block, so this is the
    exact adjoint of a 2x2 stride-2 convolution.
    """
    x = check_tensor(x)
    w = check_tensor(w, name="weights")
    n, c, h, wd = x.shape
    ic, oc, kh, kw = w.shape
    if ic != c or (kh, kw) != (2, 2):
        raise ShapeMismatchError(
            f"transposed_conv2d: input {x.shape}, weights {w.shape}")
    xflat = x.transpose(0, 2, 3, 1).reshape(-1, c)
    y = xflat @ w.reshape(c, oc * 4)
    y = y.reshape(n, h, wd, oc, 2, 2).transpose(0, 3, 1, 4, 2, 5)
    return np.ascontiguousarray(y.reshape(n, oc, 2 * h, 2 * wd)), (xflat, x.shape, w)


def transposed_conv2d_backward(dout, cache):
    """Gradients ``(dx, dw)`` of a transposed_conv2d."""
    xflat, xshape, w = cache
    n, c, h, wd = xshape
    oc = w.shape[1]
    dy = dout.reshape(n, oc, h, 2, wd, 2).transpose(0, 2, 4, 1, 3, 5)
    dy = dy.reshape(n * h * wd, oc * 4)
    dx = (dy @ w.reshape(c, oc * 4).T).reshape(n, h, wd, c).transpose(0, 3, 1, 2)
    dw = (xflat.T @ dy).reshape(w.shape)
    return np.ascontiguousarray(dx), dw


# -- pooling and activations ---------------------------------------------

def maxpool2d(x):
    """3x3 max pooling, stride 2, padding 1 (filled with -inf); halves H and W.

    Ties go to the first maximum in row-major window order.
    """
    x = check_tensor(x)
    n, c, h, wd = x.shape
    if h % 2 or wd % 2:
        raise OddSpatialDimsError(f"maxpool2d needs even H and W, got {h}x{wd}")
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
    taps = np.stack([xp[:, :, i:i + h:2, j:j + wd:2]
                     for i in range(3) for j in range(3)])
    arg = taps.argmax(axis=0)
    out = np.take_along_axis(taps, arg[None], axis=0)[0]
    return out, (x.shape, arg)


def maxpool2d_backward(dout, cache):
    xshape, arg = cache
    n, c, h, wd = xshape
    dxp = np.zeros((n, c, h + 2, wd + 2), dtype=dout.dtype)
    k = 0
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h:2, j:j + wd:2] += np.where(arg == k, dout, 0)
            k += 1
    return dxp[:, :, 1:-1, 1:-1].copy()


def relu(x):
    return np.maximum(x, 0), x


def relu_backward(dout, cache):
    # subgradient 0 at x == 0
    return dout * (cache > 0)


def softmax2(logits):
    """Per-pixel softmax over exactly two channels."""
    logits = check_tensor(logits)
    if logits.shape[1] != 2:
        raise ChannelCountError(f"softmax2 needs 2 channels, got {logits.shape[1]}")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    return probs, probs


def softmax2_backward(dout, probs):
    return probs * (dout - (dout * probs).sum(axis=1, keepdims=True))


# -- loss ----------------------------------------------------------------

class LossMode(str, enum.Enum):
    LITERAL = "literal"
    STANDARD_WCCE = "wcce"


@dataclass(frozen=True)
class LossConfig:
    """Class weights ``(background, skeleton)`` and loss form.

    ``literal`` scores a pixel of true class c as ``1 - w_c * p_c`` (affine
    in the probability, can go negative); ``wcce`` is the usual
    ``-w_c * ln(p_c)``. Both average over pixels and batch.
    """

    class_weights: tuple = (1.0, 25.0)
    mode: LossMode = LossMode.STANDARD_WCCE

    def __post_init__(self):
        object.__setattr__(self, "mode", LossMode(self.mode))
        weights = tuple(float(v) for v in self.class_weights)
        object.__setattr__(self, "class_weights", weights)
        if len(weights) != 2 or min(weights) <= 0:
            raise InvalidConfigError(f"class weights must be two positive reals, got {weights}")


def weighted_loss(probs, target, cfg=None):
    """Weighted loss of ``probs [N,2,H,W]`` against boolean ``target [N,H,W]``.

    Returns ``(loss, cache)``; pass the cache to ``weighted_loss_backward``.
    """
    cfg = cfg or LossConfig()
    probs = check_tensor(probs, name="probs")
    target = np.asarray(target, dtype=bool)
    if probs.shape[1] != 2 or target.shape != (probs.shape[0],) + probs.shape[2:]:
        raise ShapeMismatchError(f"probs {probs.shape} vs target {target.shape}")
    w0, w1 = cfg.class_weights
    weight = np.where(target, w1, w0).astype(probs.dtype)
    p_true = np.where(target, probs[:, 1], probs[:, 0])
    if cfg.mode is LossMode.LITERAL:
        per_pixel = 1.0 - weight * p_true
    else:
        per_pixel = -weight * np.log(p_true + LOG_EPS)
    return float(per_pixel.mean(dtype=np.float64)), (probs, target, weight, cfg.mode)


def weighted_loss_backward(dout, cache):
    """Gradient of ``dout * loss`` with respect to ``probs``."""
    probs, target, weight, mode = cache
    m = target.size
    if mode is LossMode.LITERAL:
        g = -weight / m
    else:
        p_true = np.where(target, probs[:, 1], probs[:, 0])
        g = -weight / ((p_true + LOG_EPS) * m)
    g = (g * dout).astype(probs.dtype)
    dprobs = np.zeros_like(probs)
    dprobs[:, 1] = np.where(target, g, 0)
    dprobs[:, 0] = np.where(target, 0, g)
    return dprobs


# -- optimizer -----------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidConfigError("Adam betas must lie in (0, 1)")
        if self.eps <= 0 or self.lr <= 0:
            raise InvalidConfigError("Adam lr and eps must be positive")


def adam_step(params, grads, state):
    """One bias-corrected Adam update of ``params`` (dict of arrays) in place.

    Returns ``(params, state)`` for convenience.
    """
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatchError(f"grad {name}: {g.shape} != {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= (state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.dtype)
    return params, state


# -- initialisation and gradient checking ---------------------------------

def he_uniform(rng, shape, fan_in, dtype=np.float32):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def relative_error(analytic, numeric):
    """Max absolute deviation scaled by the larger gradient magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def numeric_gradient(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f()`` with respect to array ``x`` (mutated in place)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def grad_check(forward, backward, inputs, seed=0, h=1e-5, wrt=None):
    """Worst relative error between analytic and finite-difference gradients.

    ``forward(*inputs)`` returns ``(out, cache)``; ``backward(dout, cache)``
    returns one gradient per input (a single array or a tuple). A seeded random
    upstream gradient turns a tensor output into the scalar ``sum(G * out)``.
    ``wrt`` lists the input positions to check (default: all).
    """
    inputs = [np.array(a, dtype=np.float64) if np.asarray(a).dtype.kind == "f" else a
              for a in inputs]
    rng = np.random.default_rng(seed)
    out, cache = forward(*inputs)
    upstream = rng.standard_normal(np.shape(out))
    grads = backward(upstream if np.ndim(out) else float(upstream), cache)
    if not isinstance(grads, tuple):
        grads = (grads,)
    positions = range(len(inputs)) if wrt is None else wrt

    def scalar():
        o, _ = forward(*inputs)
        return float(np.sum(upstream * o))

    worst = 0.0
    for pos in positions:
        num = numeric_gradient(scalar, inputs[pos], h)
        worst = max(worst, relative_error(grads[pos], num))
    return worst
