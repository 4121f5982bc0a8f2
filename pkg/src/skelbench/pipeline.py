"""Sequential multi-stage U-Net training, inference and model files.

Stage 1 (the skeletonizer) learns shape -> skeleton. Every later stage (a
corrector) learns the binarized output of the frozen stages before it ->
the original skeleton. Stages are never trained jointly.
"""

import io
import json
import logging
import math
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensor_nn as nn
from .errors import (BadMagicError, EmptyDatasetError, InvalidConfigError,
                     ModelFormatError, NonFiniteLossError, SizeMismatchError,
                     TruncatedFileError, VersionMismatchError)
from .unet import UNet, UNetConfig, build_unet
from .validation import check_mask, check_mask_batch

log = logging.getLogger(__name__)

MAGIC = b"SKLB"
FORMAT_VERSION = 1
INFER_CHUNK = 32


@dataclass(frozen=True)
class PipelineConfig:
    n_stages: int = 2
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss: nn.LossConfig = field(default_factory=nn.LossConfig)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", nn.LossConfig(**self.loss))
        if self.n_stages < 1:
            raise InvalidConfigError("n_stages must be >= 1")
        if self.batch_size < 1:
            raise InvalidConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise InvalidConfigError("epochs must be >= 0")
        # validates betas, lr, eps
        self.adam_state()

    def adam_state(self):
        return nn.AdamState(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    def to_dict(self):
        d = asdict(self)
        d["loss"] = {"class_weights": list(self.loss.class_weights),
                     "mode": self.loss.mode.value}
        return d


@dataclass
class ModelBundle:
    """Trained weights of every stage plus the configs that produced them."""

    unet: UNetConfig
    pipeline: PipelineConfig
    stages: list
    version: int = FORMAT_VERSION
    history: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.stages) != self.pipeline.n_stages:
            raise InvalidConfigError(
                f"bundle has {len(self.stages)} stages, config says {self.pipeline.n_stages}")

    def networks(self):
        return [UNet(self.unet, params) for params in self.stages]

    def prefix(self, k):
        """The first ``k`` stages as a bundle of their own.

        Stages are frozen once trained, so this is exactly the model that
        training with ``n_stages=k`` and the same settings would produce.
        """
        if not 1 <= k <= len(self.stages):
            raise InvalidConfigError(f"prefix length {k} outside 1..{len(self.stages)}")
        return ModelBundle(self.unet, replace(self.pipeline, n_stages=k),
                           self.stages[:k], self.version, self.history[:k])


def _as_input(masks, dtype):
    return np.asarray(masks, dtype=dtype)[:, None]


def predict_proba(net, shapes, chunk=INFER_CHUNK):
    """Skeleton-class probability ``(n, h, w)`` for a batch of masks."""
    shapes = np.asarray(shapes)
    out = np.empty(shapes.shape, dtype=net.dtype)
    for i in range(0, len(shapes), chunk):
        probs = net.forward(_as_input(shapes[i:i + chunk], net.dtype))
        net._tape = None
        out[i:i + chunk] = probs[:, 1]
    return out


def predict_masks(net, shapes, chunk=INFER_CHUNK):
    """Binarize by per-pixel argmax; a 0.5/0.5 tie goes to skeleton."""
    shapes = np.asarray(shapes)
    out = np.empty(shapes.shape, dtype=bool)
    for i in range(0, len(shapes), chunk):
        probs = net.forward(_as_input(shapes[i:i + chunk], net.dtype))
        net._tape = None
        out[i:i + chunk] = probs[:, 1] >= probs[:, 0]
    return out


def train_stage(net, inputs, targets, cfg, rng=None):
    """Train ``net`` in place with Adam over seeded shuffled mini-batches.

    Returns the per-epoch mean loss (sample weighted). Zero epochs leave the
    weights untouched.
    """
    inputs = np.asarray(inputs)
    targets = check_mask_batch(targets, "targets")
    if len(inputs) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    if inputs.shape != targets.shape:
        raise SizeMismatchError(f"inputs {inputs.shape} vs targets {targets.shape}")
    s = net.cfg.input_size
    if inputs.shape[1:] != (s, s):
        raise SizeMismatchError(f"samples are {inputs.shape[1:]}, network expects {s}x{s}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    state = cfg.adam_state()
    n = len(inputs)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            probs = net.forward(_as_input(inputs[idx], net.dtype))
            loss, cache = nn.weighted_loss(probs, targets[idx], cfg.loss)
            if not math.isfinite(loss):
                raise NonFiniteLossError(
                    f"loss became {loss} at epoch {epoch + 1}, batch starting {start}")
            net.backward(nn.weighted_loss_backward(1.0, cache))
            nn.adam_step(net.params, net.grads, state)
            total += loss * len(idx)
        history.append(total / n)
        log.debug("epoch %d/%d loss %.6f", epoch + 1, cfg.epochs, history[-1])
    return history


def stage_seeds(seed, stage):
    """Independent generators for a stage's initial weights and batch order."""
    return (np.random.default_rng([seed, stage, 0]),
            np.random.default_rng([seed, stage, 1]))


def train_pipeline(shapes, skeletons, cfg, unet_cfg=None, on_stage=None, base=None):
    """Train ``cfg.n_stages`` U-Nets in series and return a ModelBundle.

    ``on_stage(k, inputs)`` is called with each stage's training inputs
    before it trains. ``base`` is an already trained bundle with fewer stages
    whose frozen stages are reused; the result is identical to training all
    stages from scratch with the same config.
    """
    shapes = check_mask_batch(shapes, "shapes")
    skeletons = check_mask_batch(skeletons, "skeletons")
    if len(shapes) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    if unet_cfg is None:
        unet_cfg = UNetConfig(input_size=shapes.shape[1])
    stages = []
    history = []
    current = shapes
    if base is not None:
        if base.unet != unet_cfg or base.pipeline.n_stages > cfg.n_stages:
            raise InvalidConfigError("base bundle does not match the requested pipeline")
        if asdict(base.pipeline) | {"n_stages": 0} != asdict(cfg) | {"n_stages": 0}:
            raise InvalidConfigError("base bundle was trained with different settings")
        for k, params in enumerate(base.stages):
            if on_stage is not None:
                on_stage(k, current)
            stages.append(params)
            history.append(list(base.history[k]) if k < len(base.history) else [])
            current = predict_masks(UNet(unet_cfg, params), current)
    for k in range(len(stages), cfg.n_stages):
        if on_stage is not None:
            on_stage(k, current)
        init_rng, shuffle_rng = stage_seeds(cfg.seed, k)
        net = build_unet(unet_cfg, seed=init_rng)
        log.info("training stage %d/%d (%s loss, weights %s)", k + 1, cfg.n_stages,
                 cfg.loss.mode.value, list(cfg.loss.class_weights))
        history.append(train_stage(net, current, skeletons, cfg, rng=shuffle_rng))
        stages.append(net.params)
        if k + 1 < cfg.n_stages:
            current = predict_masks(net, current)
    return ModelBundle(unet_cfg, cfg, stages, history=history)


def infer_batch(bundle, shapes):
    """Run every stage in order, binarizing between stages and at the end."""
    shapes = check_mask_batch(shapes, "shapes")
    s = bundle.unet.input_size
    if shapes.shape[1:] != (s, s):
        raise SizeMismatchError(f"input is {shapes.shape[1:]}, model expects {s}x{s}")
    current = shapes
    for net in bundle.networks():
        current = predict_masks(net, current)
    return current


def infer(bundle, shape):
    shape = check_mask(shape, "shape")
    return infer_batch(bundle, shape[None])[0]


# -- model files -----------------------------------------------------------

def _config_blob(bundle):
    blob = {"unet": bundle.unet.to_dict(), "pipeline": bundle.pipeline.to_dict()}
    return json.dumps(blob, sort_keys=True, separators=(",", ":")).encode("utf-8")


def dumps_model(bundle):
    """Serialize a bundle to bytes (little-endian, float32 tensors)."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(bundle.stages)))
    blob = _config_blob(bundle)
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    for params in bundle.stages:
        buf.write(struct.pack("<I", len(params)))
        for name, arr in params.items():
            raw = name.encode("utf-8")
            buf.write(struct.pack("<I", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<I", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"model file ends at byte {len(self.data)}, needed {self.pos + n}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads_model(data):
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise BadMagicError("not a skelbench model file (bad magic)")
    version, n_stages = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"model format {version}, expected {FORMAT_VERSION}")
    (blob_len,) = r.unpack("<Q")
    try:
        blob = json.loads(r.take(blob_len).decode("utf-8"))
        unet_cfg = UNetConfig(**blob["unet"])
        pipe_cfg = PipelineConfig(**blob["pipeline"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFormatError(f"bad config blob: {exc}") from exc
    stages = []
    for _ in range(n_stages):
        (count,) = r.unpack("<I")
        params = OrderedDict()
        for _ in range(count):
            (name_len,) = r.unpack("<I")
            name = r.take(name_len).decode("utf-8")
            (ndim,) = r.unpack("<I")
            dims = r.unpack(f"<{ndim}I")
            size = int(np.prod(dims, dtype=np.int64))
            arr = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims)
            params[name] = arr.astype(np.float32)
        stages.append(params)
    if r.pos != len(data):
        raise ModelFormatError(f"{len(data) - r.pos} trailing bytes after the last stage")
    return ModelBundle(unet_cfg, pipe_cfg, stages, version=version)


def save_model(bundle, path):
    with open(path, "wb") as fh:
        fh.write(dumps_model(bundle))


def load_model(path):
    with open(path, "rb") as fh:
        return loads_model(fh.read())
