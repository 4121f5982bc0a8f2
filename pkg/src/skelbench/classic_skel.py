"""Classical skeletonizers: Zhang-Suen thinning, distance-ridge medial axis, spur pruning.

These produce ground truth for synthetic datasets and serve as the non-learned
baseline. All functions take and return 2-D boolean masks.
"""

import enum
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import InvalidConfigError
from .imgcore import connected_components, distance_transform, neighbor_count
from .validation import check_mask, check_mask_batch


class Variant(str, enum.Enum):
    ZHANG_SUEN = "zhang-suen"
    MEDIAL_AXIS = "medial-axis"


@dataclass(frozen=True)
class ThinningAlgo:
    variant: Variant = Variant.ZHANG_SUEN
    prune_length: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.prune_length < 0:
            raise InvalidConfigError("prune_length must be >= 0")

    def apply(self, shape):
        return skeletonize(shape, self.variant, self.prune_length)


def _neighbors(img):
    """P2..P9 (N, NE, E, SE, S, SW, W, NW) as uint8 arrays; outside the frame is 0."""
    p = np.pad(img, 1).astype(np.uint8)
    h, w = img.shape

    def at(dr, dc):
        return p[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]

    return [at(-1, 0), at(-1, 1), at(0, 1), at(1, 1),
            at(1, 0), at(1, -1), at(0, -1), at(-1, -1)]


def zs_deletable(img, step):
    """Pixels the given Zhang-Suen sub-pass (1 or 2) would delete from ``img``."""
    img = check_mask(img)
    nb = _neighbors(img)
    p2, p3, p4, p5, p6, p7, p8, p9 = nb
    b = sum(n.astype(np.int16) for n in nb)
    seq = nb + [p2]
    a = sum(((seq[i] == 0) & (seq[i + 1] == 1)).astype(np.int16) for i in range(8))
    cond = img & (b >= 2) & (b <= 6) & (a == 1)
    if step == 1:
        cond &= (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
    else:
        cond &= (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
    return cond


def _spare_last_pixels(img, kill):
    """Unmark one pixel of every component that ``kill`` would erase entirely.

    Plain Zhang-Suen deletes a 2x2 block (what small discs collapse to) in a
    single sub-pass; keeping its raster-first pixel preserves the component.
    """
    survivors = img & ~kill
    count, labels = connected_components(img)
    doomed = np.setdiff1d(np.arange(1, count + 1), labels[survivors])
    if doomed.size == 0:
        return kill
    kill = kill.copy()
    flat = labels.ravel()
    for lab in doomed:
        kill.flat[np.argmax(flat == lab)] = False
    return kill


def zhang_suen_thin(shape):
    """Iterate the two Zhang-Suen sub-passes until neither deletes a pixel.

    Components are never erased completely (see ``_spare_last_pixels``);
    otherwise the result is the textbook algorithm's.
    """
    img = check_mask(shape).copy()
    while True:
        changed = False
        for step in (1, 2):
            kill = zs_deletable(img, step)
            if kill.any():
                img &= ~_spare_last_pixels(img, kill)
                changed = True
        if not changed:
            return img


_DIRECTIONS = ((0, 1), (1, 0), (1, 1), (1, -1))


def medial_axis(shape):
    """Ridge of the Euclidean distance transform.

    A foreground pixel is kept when, along one of the four axis/diagonal
    directions, it is >= its predecessor and > its successor. The asymmetric
    comparison keeps exactly one pixel of a two-pixel-wide ridge plateau.
    """
    shape = check_mask(shape)
    dt = distance_transform(shape)
    h, w = shape.shape
    padded = np.pad(dt, 1)
    out = np.zeros_like(shape)
    for dr, dc in _DIRECTIONS:
        prev = padded[1 - dr:1 - dr + h, 1 - dc:1 - dc + w]
        nxt = padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        out |= (dt >= prev) & (dt > nxt)
    return out & shape


def crossing_number(img):
    """Number of separate foreground runs in each pixel's 8-neighbour ring."""
    nb = _neighbors(check_mask(img))
    seq = nb + [nb[0]]
    return sum(((seq[i] == 0) & (seq[i + 1] == 1)).astype(np.uint8)
               for i in range(8))


_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _fg_neighbors(img, r, c):
    h, w = img.shape
    out = []
    for dr, dc in _RING:
        rr, cc = r + dr, c + dc
        if 0 <= rr < h and 0 <= cc < w and img[rr, cc]:
            out.append((rr, cc))
    return out


def _trace_branch(img, junction, start):
    """Walk from an endpoint until a junction pixel is adjacent.

    Returns ``(branch_pixels, junction_pixel)``. The junction is None when the
    walk dies out first, meaning the branch hangs off no junction.
    """
    branch = [start]
    seen = {start}
    cur = start
    while True:
        nxt = [p for p in _fg_neighbors(img, *cur) if p not in seen]
        if not nxt:
            return branch, None
        hits = [p for p in nxt if junction[p]]
        if hits:
            return branch, min(hits)
        seen.update(nxt)
        branch.extend(sorted(nxt))
        # staircase corners offer two adjacent candidates; follow the one
        # that leads on
        onward = [p for p in nxt
                  if any(q not in seen for q in _fg_neighbors(img, *p))]
        if not onward:
            return branch, None
        if len(onward) > 1:
            return branch, cur
        cur = onward[0]


def prune_spurs(skel, max_len):
    """Remove terminal branches shorter than ``max_len`` pixels.

    Endpoints have exactly one 8-neighbour; junctions are pixels whose
    neighbour ring holds three or more separate foreground runs. One branch
    (the shortest, ties by raster position) is removed per round until none
    qualifies, so a junction whose arms are all short keeps its longest arm
    and a skeleton that is a bare path is never shortened.
    """
    img = check_mask(skel).copy()
    if max_len <= 0:
        return img
    while True:
        counts = neighbor_count(img)
        junction = img & (crossing_number(img) >= 3)
        best = None
        for r, c in np.argwhere(img & (counts == 1)):
            branch, hub = _trace_branch(img, junction, (int(r), int(c)))
            if hub is None or len(branch) >= max_len:
                continue
            key = (len(branch), branch[0])
            if best is None or key < best[0]:
                best = (key, branch)
        if best is None:
            return img
        for p in best[1]:
            img[p] = False


def skeletonize(shape, variant=Variant.ZHANG_SUEN, prune_length=0):
    variant = Variant(variant)
    if variant is Variant.ZHANG_SUEN:
        skel = zhang_suen_thin(shape)
    else:
        skel = medial_axis(shape)
    return prune_spurs(skel, prune_length) if prune_length else skel


class ThinningSkeletonizer(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping a batch of shapes to classical skeletons.

    ``fit`` does nothing; it exists so the thinning baseline drops into the
    same pipelines and evaluation code as the learned models.
    """

    def __init__(self, algo="zhang-suen", prune_length=0):
        self.algo = algo
        self.prune_length = prune_length

    def fit(self, X, y=None):
        ThinningAlgo(self.algo, self.prune_length)
        return self

    def transform(self, X):
        algo = ThinningAlgo(self.algo, self.prune_length)
        X = check_mask_batch(X, "X")
        return np.stack([algo.apply(m) for m in X]) if len(X) else X

    def predict(self, X):
        return self.transform(X)
