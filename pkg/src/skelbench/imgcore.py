"""Binary raster primitives: PNG I/O, shifts, boxes, distance transform, labelling.

Coordinates are ``(row, col)`` with the origin at the top-left pixel. A shift
by ``(dx, dy)`` moves content ``dx`` columns right and ``dy`` rows down.
"""

from typing import NamedTuple

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import EmptyMaskError, PNGDecodeError
from .validation import check_mask

FOREGROUND_THRESHOLD = 128
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class BBox(NamedTuple):
    """Inclusive pixel bounds of a mask's foreground."""

    rmin: int
    cmin: int
    rmax: int
    cmax: int

    @property
    def center(self):
        return ((self.rmin + self.rmax) / 2.0, (self.cmin + self.cmax) / 2.0)


def _luminance(img):
    mode = img.mode
    if mode in ("I;16", "I;16B", "I;16L", "I;16N"):
        return np.asarray(img, dtype=np.float64) / 257.0
    if mode == "I":
        # 32-bit PIL mode used for 16-bit grayscale PNGs
        return np.asarray(img, dtype=np.float64) / 257.0
    if mode in ("RGB", "RGBA", "P", "PA", "LA", "1", "L", "CMYK", "YCbCr"):
        if mode in ("P", "PA", "CMYK", "YCbCr"):
            img = img.convert("RGB")
        if img.mode in ("RGB", "RGBA"):
            rgb = np.asarray(img, dtype=np.float64)[..., :3]
            return rgb @ np.array([0.299, 0.587, 0.114])
        return np.asarray(img.convert("L"), dtype=np.float64)
    return np.asarray(img.convert("L"), dtype=np.float64)


def load_png(path):
    """Read a PNG as a boolean mask (foreground where luminance >= 128)."""
    try:
        with Image.open(path) as img:
            if img.format != "PNG":
                raise PNGDecodeError(f"{path}: not a PNG file ({img.format})")
            img.load()
            lum = _luminance(img)
    except UnidentifiedImageError as exc:
        raise PNGDecodeError(f"{path}: cannot decode image") from exc
    except (SyntaxError, ValueError) as exc:
        raise PNGDecodeError(f"{path}: {exc}") from exc
    if lum.size == 0:
        raise PNGDecodeError(f"{path}: zero-area image")
    # round before thresholding so 127.9999 from float weights is not flipped
    return np.round(lum, 6) >= FOREGROUND_THRESHOLD


def save_png(mask, path):
    """Write ``mask`` as an 8-bit grayscale PNG (foreground 255, background 0)."""
    mask = check_mask(mask)
    Image.fromarray(mask.astype(np.uint8) * 255, mode="L").save(path, format="PNG")


def shift_mask(mask, dx, dy):
    """Translate foreground by ``dx`` columns and ``dy`` rows, clipping at the frame."""
    mask = check_mask(mask)
    h, w = mask.shape
    out = np.zeros_like(mask)
    dx, dy = int(dx), int(dy)
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src_r = slice(max(0, -dy), h - max(0, dy))
    src_c = slice(max(0, -dx), w - max(0, dx))
    dst_r = slice(max(0, dy), h - max(0, -dy))
    dst_c = slice(max(0, dx), w - max(0, -dx))
    out[dst_r, dst_c] = mask[src_r, src_c]
    return out


def bounding_box(mask):
    """Tightest inclusive box around the foreground.

    Raises EmptyMaskError when there is no foreground pixel.
    """
    mask = check_mask(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        raise EmptyMaskError("bounding box of an empty mask")
    cols = np.flatnonzero(mask.any(axis=0))
    return BBox(int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1]))


def _lower_envelope_1d(f):
    """Squared distance transform of a sampled function (Felzenszwalb-Huttenlocher).

    ``f`` holds 0 at sites and ``inf`` elsewhere; returns ``min_q (p-q)^2 + f[q]``.
    """
    n = len(f)
    d = [float("inf")] * n
    sites = [q for q in range(n) if f[q] != float("inf")]
    if not sites:
        return d
    v = [sites[0]]
    z = [float("-inf"), float("inf")]
    for q in sites[1:]:
        fq = f[q] + q * q
        p = v[-1]
        s = (fq - (f[p] + p * p)) / (2 * (q - p))
        # z[0] is -inf, so the envelope never empties
        while s <= z[-2]:
            v.pop()
            z.pop()
            p = v[-1]
            s = (fq - (f[p] + p * p)) / (2 * (q - p))
        z[-1] = s
        v.append(q)
        z.append(float("inf"))
    k = 0
    for p in range(n):
        while z[k + 1] < p:
            k += 1
        q = v[k]
        d[p] = (p - q) * (p - q) + f[q]
    return d


def distance_transform(mask):
    """Exact Euclidean distance from each pixel to the nearest background pixel.

    Pixels outside the frame count as background, so every value is finite
    and a foreground pixel on the border has distance 1.
    """
    mask = check_mask(mask)
    padded = np.pad(mask, 1, constant_values=False)
    h, w = padded.shape
    inf = float("inf")
    grid = np.where(padded, inf, 0.0)
    cols = np.empty_like(grid)
    for c in range(w):
        cols[:, c] = _lower_envelope_1d(grid[:, c].tolist())
    out = np.empty_like(grid)
    for r in range(h):
        out[r, :] = _lower_envelope_1d(cols[r, :].tolist())
    return np.sqrt(out[1:-1, 1:-1])


def connected_components(mask):
    """Label 8-connected foreground components.

    Returns ``(count, labels)`` with labels dense from 1 and background 0.
    """
    mask = check_mask(mask)
    labels, count = ndimage.label(mask, structure=EIGHT_CONNECTED)
    return int(count), labels


def neighbor_count(mask):
    """Number of 8-neighbours in the foreground for every pixel."""
    m = np.pad(mask, 1).astype(np.uint8)
    h, w = mask.shape
    total = np.zeros((h, w), dtype=np.uint8)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr or dc:
                total += m[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
    return total
