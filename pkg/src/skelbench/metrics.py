"""Pixel F1 and the translation-aware M-CCORR skeleton metric.

M-CCORR divides the best zero-mean normalized cross-correlation over integer
translations by ``log2(D + 2)``, where ``D`` is the distance between the
bounding-box centers of truth and prediction. Identical skeletons score 1;
a perfect skeleton displaced by ``D`` pixels scores ``1 / log2(D + 2)``
instead of collapsing to 0 the way pixel F1 does.
"""

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.signal import fftconvolve

from .errors import AllRejectedError, EmptyMaskError, InvalidConfigError
from .imgcore import bounding_box
from .validation import check_mask, check_same_shape

# offsets whose coefficient is within this of the best are treated as ties
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class MatchConfig:
    """Translation search settings for max_zncc.

    ``search_radius=None`` uses a quarter of the smaller image side
    (64 for 256x256 inputs).
    """

    search_radius: int = None
    min_overlap_fraction: float = 0.25

    def __post_init__(self):
        if self.search_radius is not None and self.search_radius < 0:
            raise InvalidConfigError("search_radius must be >= 0")
        if not 0 < self.min_overlap_fraction <= 1:
            raise InvalidConfigError("min_overlap_fraction must lie in (0, 1]")

    def radius_for(self, shape):
        if self.search_radius is not None:
            return int(self.search_radius)
        return min(shape) // 4


@dataclass
class MetricReport:
    precision: float
    recall: float
    f1: float
    max_zncc: float
    center_distance: float
    m_ccorr: float
    degenerate: bool = False

    def to_dict(self):
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def _pair(truth, pred):
    truth = check_mask(truth, "truth")
    pred = check_mask(pred, "pred")
    check_same_shape(truth, pred)
    return truth, pred


def confusion_counts(truth, pred):
    """Return ``(tp, fp, fn, tn)`` pixel counts with foreground as the positive class."""
    truth, pred = _pair(truth, pred)
    tp = int(np.count_nonzero(truth & pred))
    fp = int(np.count_nonzero(~truth & pred))
    fn = int(np.count_nonzero(truth & ~pred))
    tn = truth.size - tp - fp - fn
    return tp, fp, fn, tn


def _prf(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


def precision_recall_f1(truth, pred):
    """Precision, recall, F1 and a degenerate flag (both masks empty)."""
    tp, fp, fn, _ = confusion_counts(truth, pred)
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0, True
    p, r, f = _prf(tp, fp, fn)
    return p, r, f, False


def f1_score(truth, pred):
    """Pixel F1 over the foreground class; two empty masks score 1."""
    return precision_recall_f1(truth, pred)[2]


def _window(h, w, dx, dy):
    """Slices of truth and pred that overlap once pred is moved by (dx, dy)."""
    rt = slice(max(0, dy), h + min(0, dy))
    ct = slice(max(0, dx), w + min(0, dx))
    rp = slice(max(0, -dy), h + min(0, -dy))
    cp = slice(max(0, -dx), w + min(0, -dx))
    return (rt, ct), (rp, cp)


def _pearson_from_sums(n, sa, sb, sab):
    """Correlation of two 0/1 windows from exact integer sums.

    Binary data gives sum(a^2) = sum(a), so the variances only need ``sa``.
    Zero-variance windows return 0.
    """
    cov = n * sab - sa * sb
    va = n * sa - sa * sa
    vb = n * sb - sb * sb
    if va == 0 or vb == 0:
        return 0.0
    return cov / math.sqrt(va * vb)


def zncc_at_offset(truth, pred, dx, dy, cfg=None):
    """Pearson correlation of ``truth`` with ``pred`` moved by ``(dx, dy)``.

    Only the overlap of the two frames is compared. Returns ``None`` when the
    overlap area falls below ``cfg.min_overlap_fraction`` of the image.
    """
    cfg = cfg or MatchConfig()
    truth, pred = _pair(truth, pred)
    h, w = truth.shape
    dx, dy = int(dx), int(dy)
    n = max(0, h - abs(dy)) * max(0, w - abs(dx))
    if n == 0 or n < cfg.min_overlap_fraction * h * w:
        return None
    wt, wp = _window(h, w, dx, dy)
    a = truth[wt]
    b = pred[wp]
    sa = int(np.count_nonzero(a))
    sb = int(np.count_nonzero(b))
    sab = int(np.count_nonzero(a & b))
    return _pearson_from_sums(n, sa, sb, sab)


def _rect_sums(integral, r0, r1, c0, c1):
    return (integral[r1, c1] - integral[r0, c1]
            - integral[r1, c0] + integral[r0, c0])


def zncc_surface(truth, pred, radius, min_overlap_fraction=0.25):
    """Coefficients for every offset in ``[-radius, radius]^2``.

    Returns ``(values, valid)`` indexed ``[dy + radius, dx + radius]``; all
    window sums are exact integers (cross term via FFT, rounded), so each
    entry equals what ``zncc_at_offset`` computes.
    """
    h, w = truth.shape
    offs = np.arange(-radius, radius + 1)
    dy = offs[:, None]
    dx = offs[None, :]
    n = np.clip(h - np.abs(dy), 0, None) * np.clip(w - np.abs(dx), 0, None)
    valid = (n > 0) & (n >= min_overlap_fraction * h * w)

    ta = truth.astype(np.int64)
    pb = pred.astype(np.int64)
    it = np.zeros((h + 1, w + 1), dtype=np.int64)
    it[1:, 1:] = ta.cumsum(0).cumsum(1)
    ip = np.zeros((h + 1, w + 1), dtype=np.int64)
    ip[1:, 1:] = pb.cumsum(0).cumsum(1)

    # truth window rows [max(0,dy), h+min(0,dy)), pred rows shifted by -dy
    tr0 = np.clip(dy, 0, h)
    tr1 = np.clip(h + np.minimum(0, dy), 0, h)
    tc0 = np.clip(dx, 0, w)
    tc1 = np.clip(w + np.minimum(0, dx), 0, w)
    pr0 = np.clip(-dy, 0, h)
    pr1 = np.clip(h + np.minimum(0, -dy), 0, h)
    pc0 = np.clip(-dx, 0, w)
    pc1 = np.clip(w + np.minimum(0, -dx), 0, w)
    sa = _rect_sums(it, tr0, tr1, tc0, tc1)
    sb = _rect_sums(ip, pr0, pr1, pc0, pc1)

    # sab[dy, dx] = sum_{r,c} truth[r, c] * pred[r - dy, c - dx]
    if truth.any() and pred.any():
        full = fftconvolve(ta.astype(np.float64), pb[::-1, ::-1].astype(np.float64))
        # full[i, j] pairs truth[r, c] with pred[r - (i - h + 1), c - (j - w + 1)]
        rows = dy + h - 1
        cols = dx + w - 1
        inside = (rows >= 0) & (rows < full.shape[0]) & (cols >= 0) & (cols < full.shape[1])
        sab = np.zeros(valid.shape, dtype=np.int64)
        rr = np.broadcast_to(rows, valid.shape)
        cc = np.broadcast_to(cols, valid.shape)
        sab[inside] = np.rint(full[rr[inside], cc[inside]]).astype(np.int64)
    else:
        sab = np.zeros(valid.shape, dtype=np.int64)

    n = np.broadcast_to(n, valid.shape).astype(np.int64)
    cov = (n * sab - sa * sb).astype(np.float64)
    va = (n * sa - sa * sa).astype(np.float64)
    vb = (n * sb - sb * sb).astype(np.float64)
    denom = np.sqrt(va * vb)
    values = np.zeros(valid.shape, dtype=np.float64)
    ok = valid & (va > 0) & (vb > 0)
    values[ok] = cov[ok] / denom[ok]
    return values, valid


def max_zncc(truth, pred, cfg=None):
    """Best correlation over all translations within the search radius.

    Returns ``(coefficient, (dx, dy))``. Ties (within ``TIE_TOLERANCE``) go
    to the smallest displacement, then the smallest ``dy``, then ``dx``.
    """
    cfg = cfg or MatchConfig()
    truth, pred = _pair(truth, pred)
    radius = cfg.radius_for(truth.shape)
    values, valid = zncc_surface(truth, pred, radius, cfg.min_overlap_fraction)
    if not valid.any():
        raise AllRejectedError(
            f"no offset within radius {radius} reaches overlap "
            f"{cfg.min_overlap_fraction}")
    best = values[valid].max()
    iy, ix = np.nonzero(valid & (values >= best - TIE_TOLERANCE))
    dys = iy - radius
    dxs = ix - radius
    order = np.lexsort((dxs, dys, dxs * dxs + dys * dys))
    k = order[0]
    return float(values[iy[k], ix[k]]), (int(dxs[k]), int(dys[k]))


def bbox_center_distance(truth, pred):
    """Euclidean distance between the bounding-box centers of two masks."""
    truth, pred = _pair(truth, pred)
    try:
        ct = bounding_box(truth).center
        cp = bounding_box(pred).center
    except EmptyMaskError as exc:
        raise EmptyMaskError("center distance needs two nonempty masks") from exc
    return math.hypot(ct[0] - cp[0], ct[1] - cp[1])


def evaluate_pair(truth, pred, cfg=None):
    """Full MetricReport for one truth/prediction pair."""
    cfg = cfg or MatchConfig()
    truth, pred = _pair(truth, pred)
    precision, recall, f1, _ = precision_recall_f1(truth, pred)
    t_any = bool(truth.any())
    p_any = bool(pred.any())
    if not t_any and not p_any:
        return MetricReport(precision, recall, f1, max_zncc=1.0,
                            center_distance=0.0, m_ccorr=1.0, degenerate=True)
    if not p_any or not t_any:
        # correlation is 0 everywhere (zero variance); the distance has no
        # meaning and is reported as 0 under the degenerate flag
        return MetricReport(precision, recall, f1, max_zncc=0.0,
                            center_distance=0.0, m_ccorr=0.0, degenerate=True)
    coef, _ = max_zncc(truth, pred, cfg)
    dist = bbox_center_distance(truth, pred)
    score = max(0.0, coef) / math.log2(dist + 2.0)
    return MetricReport(precision, recall, f1, max_zncc=coef,
                        center_distance=dist, m_ccorr=score)


def m_ccorr(truth, pred, cfg=None):
    """M-CCORR score of a pair (see module docstring)."""
    return evaluate_pair(truth, pred, cfg).m_ccorr


def evaluate_batch(truths, preds, cfg=None):
    if len(truths) != len(preds):
        raise ValueError(f"{len(truths)} truths but {len(preds)} predictions")
    return [evaluate_pair(t, p, cfg) for t, p in zip(truths, preds)]


def aggregate(reports):
    """Arithmetic mean of every field; ``degenerate`` becomes a fraction."""
    if not reports:
        raise ValueError("no reports to aggregate")
    return {name: sum(float(getattr(r, name)) for r in reports) / len(reports)
            for name in MetricReport.field_names()}
