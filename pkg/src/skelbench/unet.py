"""U-Net assembled from the tensor_nn kernels.

Contraction block: conv-relu, conv-relu, 3x3/2 max-pool. Expansion block:
2x2/2 transposed conv, concatenation with the same-level encoder features,
conv-relu, conv-relu. A 1x1 convolution and a two-class softmax close the net.
"""

from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor_nn as nn
from .errors import InvalidConfigError, ShapeMismatchError


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 4
    base_channels: int = 64
    input_size: int = 256
    in_channels: int = 1
    out_channels: int = 2

    def __post_init__(self):
        if self.depth < 1:
            raise InvalidConfigError("depth must be >= 1")
        if self.base_channels < 1:
            raise InvalidConfigError("base_channels must be >= 1")
        if self.input_size < 1 or self.input_size % (2 ** self.depth):
            raise InvalidConfigError(
                f"input_size {self.input_size} must be divisible by 2**depth "
                f"= {2 ** self.depth}")
        if self.in_channels != 1 or self.out_channels != 2:
            raise InvalidConfigError("the network maps 1 input channel to 2 classes")

    def to_dict(self):
        return asdict(self)

    def channels(self, level):
        return self.base_channels * 2 ** level


def _conv_specs(cfg):
    """Ordered ``(name, in_c, out_c, kind)`` for every layer with parameters."""
    specs = []
    c_in = cfg.in_channels
    for lvl in range(cfg.depth):
        ch = cfg.channels(lvl)
        specs += [(f"enc{lvl}.conv1", c_in, ch, "conv3"),
                  (f"enc{lvl}.conv2", ch, ch, "conv3")]
        c_in = ch
    bott = cfg.channels(cfg.depth)
    specs += [("bottleneck.conv1", c_in, bott, "conv3"),
              ("bottleneck.conv2", bott, bott, "conv3")]
    c_in = bott
    for lvl in reversed(range(cfg.depth)):
        ch = cfg.channels(lvl)
        specs += [(f"dec{lvl}.up", c_in, ch, "up"),
                  (f"dec{lvl}.conv1", 2 * ch, ch, "conv3"),
                  (f"dec{lvl}.conv2", ch, ch, "conv3")]
        c_in = ch
    specs.append(("head", c_in, cfg.out_channels, "conv1"))
    return specs


def parameter_count(cfg):
    total = 0
    for _, ci, co, kind in _conv_specs(cfg):
        if kind == "conv3":
            total += co * ci * 9 + co
        elif kind == "conv1":
            total += co * ci + co
        else:
            total += ci * co * 4
    return total


class UNet:
    """Network instance holding parameters, gradients and forward caches.

    Parameters live in ``params`` (an ordered name -> array dict); after
    ``backward`` the matching gradients are in ``grads``.
    """

    def __init__(self, cfg, params):
        self.cfg = cfg
        self.params = params
        self.grads = {}
        self._tape = None

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def astype(self, dtype):
        params = OrderedDict((k, v.astype(dtype)) for k, v in self.params.items())
        return UNet(self.cfg, params)

    def _conv(self, name, x, tape):
        out, cache = nn.conv2d(x, self.params[name + ".w"], self.params[name + ".b"])
        act, rcache = nn.relu(out)
        tape.append(("conv_relu", name, cache, rcache))
        return act

    def logits(self, x):
        x = np.asarray(x, dtype=self.dtype)
        s = self.cfg.input_size
        if x.ndim != 4 or x.shape[1:] != (1, s, s):
            raise ShapeMismatchError(f"expected [N,1,{s},{s}] input, got {x.shape}")
        tape = []
        skips = []
        h = x
        for lvl in range(self.cfg.depth):
            h = self._conv(f"enc{lvl}.conv1", h, tape)
            h = self._conv(f"enc{lvl}.conv2", h, tape)
            skips.append(h)
            h, cache = nn.maxpool2d(h)
            tape.append(("pool", lvl, cache, None))
        h = self._conv("bottleneck.conv1", h, tape)
        h = self._conv("bottleneck.conv2", h, tape)
        for lvl in reversed(range(self.cfg.depth)):
            h, cache = nn.transposed_conv2d(h, self.params[f"dec{lvl}.up.w"])
            tape.append(("up", f"dec{lvl}.up", cache, None))
            ch = h.shape[1]
            h = np.concatenate([h, skips[lvl]], axis=1)
            tape.append(("concat", lvl, None, ch))
            h = self._conv(f"dec{lvl}.conv1", h, tape)
            h = self._conv(f"dec{lvl}.conv2", h, tape)
        out, cache = nn.conv2d(h, self.params["head.w"], self.params["head.b"])
        tape.append(("head", "head", cache, None))
        self._tape = tape
        return out

    def forward(self, x):
        """Per-pixel class probabilities ``[N, 2, H, W]`` (channel 1 = skeleton)."""
        probs, cache = nn.softmax2(self.logits(x))
        self._tape.append(("softmax", None, cache, None))
        return probs

    def backward(self, dprobs):
        """Backpropagate ``dL/dprobs`` through the last ``forward``; fills ``grads``.

        Returns the gradient with respect to the network input.
        """
        if self._tape is None:
            raise RuntimeError("backward called before forward")
        grads = {}
        skip_grads = {}
        d = dprobs
        for kind, name, cache, extra in reversed(self._tape):
            if kind == "softmax":
                d = nn.softmax2_backward(d, cache)
            elif kind in ("head", "conv_relu"):
                if kind == "conv_relu":
                    d = nn.relu_backward(d, extra)
                d, grads[name + ".w"], grads[name + ".b"] = nn.conv2d_backward(d, cache)
            elif kind == "concat":
                skip_grads[name] = d[:, extra:]
                d = d[:, :extra]
            elif kind == "up":
                d, grads[name + ".w"] = nn.transposed_conv2d_backward(d, cache)
            elif kind == "pool":
                d = nn.maxpool2d_backward(d, cache)
                # the encoder output fed both the pool and the skip connection
                d = d + skip_grads.pop(name)
        self.grads = OrderedDict((k, grads[k]) for k in self.params)
        self._tape = None
        return d


def build_unet(cfg, seed=0, dtype=np.float32):
    """Fresh U-Net with He-uniform weights and zero biases, seeded by ``seed``."""
    if not isinstance(cfg, UNetConfig):
        raise InvalidConfigError("build_unet needs a UNetConfig")
    rng = np.random.default_rng(seed)
    params = OrderedDict()
    for name, ci, co, kind in _conv_specs(cfg):
        if kind == "up":
            params[name + ".w"] = nn.he_uniform(rng, (ci, co, 2, 2), ci, dtype)
            continue
        k = 3 if kind == "conv3" else 1
        params[name + ".w"] = nn.he_uniform(rng, (co, ci, k, k), ci * k * k, dtype)
        params[name + ".b"] = np.zeros(co, dtype=dtype)
    return UNet(cfg, params)
