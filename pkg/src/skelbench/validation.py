"""Input validation helpers.

Masks are plain 2-D boolean numpy arrays indexed ``(row, col)``; batches are
3-D arrays ``(n, row, col)``. These helpers coerce and check inputs at public
entry points so the rest of the code can assume well-formed arrays.
"""

import numpy as np

from .errors import DimensionMismatchError, ShapeMismatchError


def check_mask(mask, name="mask"):
    """Return ``mask`` as a C-contiguous 2-D bool array.

    Non-boolean input is accepted when it only holds 0/1 values (or bools);
    anything else is ambiguous and rejected.
    """
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ShapeMismatchError(f"{name} has zero area")
    if arr.dtype != np.bool_:
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} must be binary (0/1 or bool)")
        arr = arr.astype(bool)
    return np.ascontiguousarray(arr)


def check_mask_batch(masks, name="masks"):
    """Coerce a sequence of equally sized masks into an ``(n, h, w)`` bool array."""
    if isinstance(masks, np.ndarray) and masks.ndim == 3:
        if masks.shape[0] == 0:
            return masks.astype(bool)
        return np.stack([check_mask(m, name) for m in masks])
    masks = list(masks)
    if not masks:
        return np.zeros((0, 0, 0), dtype=bool)
    checked = [check_mask(m, name) for m in masks]
    first = checked[0].shape
    for i, m in enumerate(checked):
        if m.shape != first:
            raise DimensionMismatchError(
                f"{name}[{i}] has shape {m.shape}, expected {first}")
    return np.stack(checked)


def check_same_shape(a, b, names=("truth", "pred")):
    if a.shape != b.shape:
        raise DimensionMismatchError(
            f"{names[0]} shape {a.shape} != {names[1]} shape {b.shape}")


def check_tensor(x, ndim=4, name="input"):
    x = np.asarray(x)
    if x.ndim != ndim:
        raise ShapeMismatchError(f"{name} must be {ndim}-D, got {x.shape}")
    return x
