"""Synthetic shape/skeleton datasets and SkelNetOn-style directory ingestion.

On disk a dataset is ``img/<stem>.png`` (shapes) plus ``gt/<stem>.png``
(skeletons) and a ``manifest.json`` describing how it was generated.
"""

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .classic_skel import ThinningAlgo, Variant
from .errors import (DegenerateSplitError, DimensionMismatchError,
                     EmptyDirectoryError, GenerationFailureError,
                     InvalidConfigError, MissingPairError)
from .imgcore import connected_components, load_png, save_png

FAMILIES = ("ellipse-union", "polygon", "random-walk")
MAX_RETRIES = 50
SIZE_MULTIPLE = 16
GT_PRUNE_LENGTH = 8


@dataclass(frozen=True)
class DatasetSpec:
    count: int = 200
    size: int = 64
    seed: int = 0
    family_mix: tuple = (0.4, 0.4, 0.2)
    gt: ThinningAlgo = field(default_factory=lambda: ThinningAlgo(Variant.ZHANG_SUEN, GT_PRUNE_LENGTH))

    def __post_init__(self):
        if self.count < 1:
            raise InvalidConfigError("count must be >= 1")
        if self.size < SIZE_MULTIPLE or self.size % SIZE_MULTIPLE:
            raise InvalidConfigError(f"size must be a positive multiple of {SIZE_MULTIPLE}")
        mix = tuple(float(v) for v in self.family_mix)
        if len(mix) != len(FAMILIES) or min(mix) < 0 or not math.isclose(sum(mix), 1.0):
            raise InvalidConfigError(f"family_mix must be {len(FAMILIES)} ratios summing to 1")
        object.__setattr__(self, "family_mix", mix)
        if isinstance(self.gt, dict):
            object.__setattr__(self, "gt", ThinningAlgo(**self.gt))

    def to_dict(self):
        d = asdict(self)
        d["family_mix"] = list(self.family_mix)
        d["gt"] = {"variant": self.gt.variant.value, "prune_length": self.gt.prune_length}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["family_mix"] = tuple(d["family_mix"])
        d["gt"] = ThinningAlgo(**d["gt"])
        return cls(**d)


@dataclass
class SamplePair:
    shape: np.ndarray
    skeleton: np.ndarray = None
    stem: str = ""


def _draw(size, paint):
    img = Image.new("L", (size, size), 0)
    paint(ImageDraw.Draw(img))
    return np.asarray(img) >= 128


def _ellipse_union(rng, size):
    yy, xx = np.mgrid[0:size, 0:size]
    mask = np.zeros((size, size), dtype=bool)
    cy = cx = size / 2
    for _ in range(int(rng.integers(1, 5))):
        if mask.any():
            # grow from an existing pixel so the union stays connected
            pts = np.argwhere(mask)
            cy, cx = pts[rng.integers(len(pts))]
        a = rng.uniform(0.08, 0.3) * size
        b = rng.uniform(0.05, 0.18) * size
        t = rng.uniform(0, math.pi)
        dy = yy - cy
        dx = xx - cx
        u = dx * math.cos(t) + dy * math.sin(t)
        v = -dx * math.sin(t) + dy * math.cos(t)
        mask |= (u / a) ** 2 + (v / b) ** 2 <= 1.0
    return mask


def _polygon(rng, size):
    n = int(rng.integers(5, 11))
    angles = np.sort(rng.uniform(0, 2 * math.pi, n))
    radii = rng.uniform(0.15, 0.42, n) * size
    c = size / 2 + rng.uniform(-0.05, 0.05, 2) * size
    pts = [(float(c[1] + r * math.cos(t)), float(c[0] + r * math.sin(t)))
           for r, t in zip(radii, angles)]
    return _draw(size, lambda d: d.polygon(pts, fill=255))


def _random_walk(rng, size):
    steps = int(rng.integers(4, 9))
    width = int(rng.integers(max(3, size // 16), max(4, size // 8) + 1))
    pos = np.array([size / 2, size / 2])
    heading = rng.uniform(0, 2 * math.pi)
    pts = [tuple(pos)]
    for _ in range(steps):
        heading += rng.normal(0, 0.8)
        pos = pos + rng.uniform(0.06, 0.14) * size * np.array([math.cos(heading), math.sin(heading)])
        pts.append(tuple(float(v) for v in pos))
    return _draw(size, lambda d: d.line(pts, fill=255, width=width, joint="curve"))


_GENERATORS = {"ellipse-union": _ellipse_union, "polygon": _polygon,
               "random-walk": _random_walk}


def _acceptable(mask, margin=2):
    if mask.sum() < 0.02 * mask.size:
        return False
    inner = np.zeros_like(mask)
    inner[margin:-margin, margin:-margin] = True
    if (mask & ~inner).any():
        return False
    count, _ = connected_components(mask)
    return count == 1


def gen_shape(spec, index):
    """Deterministic ``SamplePair`` for ``(spec.seed, index)``.

    The shape is one 8-connected object clear of the border; its skeleton
    comes from the configured classical algorithm.
    """
    rng = np.random.default_rng([spec.seed, index])
    family = FAMILIES[int(rng.choice(len(FAMILIES), p=spec.family_mix))]
    make = _GENERATORS[family]
    for _ in range(MAX_RETRIES):
        shape = make(rng, spec.size)
        if not _acceptable(shape):
            continue
        skel = spec.gt.apply(shape)
        if skel.any():
            return SamplePair(shape, skel, f"{index:04d}")
    raise GenerationFailureError(
        f"no valid {family} shape for seed {spec.seed}, index {index} "
        f"after {MAX_RETRIES} draws")


def gen_pairs(spec, workers=1):
    """All ``spec.count`` pairs in index order; each depends only on (seed, index)."""
    if workers <= 1:
        return [gen_shape(spec, i) for i in range(spec.count)]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(lambda i: gen_shape(spec, i), range(spec.count)))


def gen_dataset(spec, out_dir, workers=1):
    """Write ``img/NNNN.png``, ``gt/NNNN.png`` and ``manifest.json``; return the manifest."""
    out = Path(out_dir)
    (out / "img").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    files = []
    for pair in gen_pairs(spec, workers):
        img = f"img/{pair.stem}.png"
        gt = f"gt/{pair.stem}.png"
        save_png(pair.shape, out / img)
        save_png(pair.skeleton, out / gt)
        files.append({"stem": pair.stem, "img": img, "gt": gt})
    manifest = {"spec": spec.to_dict(), "files": files}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _png_stems(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise EmptyDirectoryError(f"{directory} is not a directory")
    stems = {p.stem: p for p in directory.iterdir()
             if p.is_file() and p.suffix.lower() == ".png"}
    if not stems:
        raise EmptyDirectoryError(f"no PNG files in {directory}")
    return stems


def ingest_dir(img_dir, gt_dir=None):
    """Load shapes (and skeletons, paired by file stem) sorted by stem.

    Without ``gt_dir`` the pairs carry ``skeleton=None``.
    """
    imgs = _png_stems(img_dir)
    gts = _png_stems(gt_dir) if gt_dir is not None else None
    if gts is not None:
        for stem in sorted(set(imgs) ^ set(gts)):
            raise MissingPairError(stem, gt_dir if stem in imgs else img_dir)
    pairs = []
    for stem in sorted(imgs):
        shape = load_png(imgs[stem])
        skel = None
        if gts is not None:
            skel = load_png(gts[stem])
            if skel.shape != shape.shape:
                raise DimensionMismatchError(
                    f"{stem}: shape {shape.shape} vs skeleton {skel.shape}")
        pairs.append(SamplePair(shape, skel, stem))
    return pairs


def split_dataset(pairs, train_fraction, seed):
    """Seeded shuffle then split into ``(train, holdout)``."""
    if not 0 < train_fraction < 1:
        raise InvalidConfigError("train_fraction must lie in (0, 1)")
    pairs = list(pairs)
    order = np.random.default_rng(seed).permutation(len(pairs))
    cut = int(round(train_fraction * len(pairs)))
    if cut == 0 or cut == len(pairs):
        raise DegenerateSplitError(
            f"{len(pairs)} items at fraction {train_fraction} leaves one side empty")
    return [pairs[i] for i in order[:cut]], [pairs[i] for i in order[cut:]]


def stack_pairs(pairs):
    """``(shapes, skeletons)`` as ``(n, h, w)`` bool arrays."""
    shapes = np.stack([p.shape for p in pairs])
    skels = np.stack([p.skeleton for p in pairs]) if pairs and pairs[0].skeleton is not None else None
    return shapes, skels


def default_workers():
    """Worker cap from ``SKELBENCH_THREADS`` (0 or unset means CPU count)."""
    try:
        n = int(os.environ.get("SKELBENCH_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)
