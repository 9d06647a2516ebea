"""Mask <-> 3-channel codec and Otsu binarization of soft predictions.

Masks are ``(H, W)`` arrays; images are channel-last ``(H, W, 3)`` arrays.
A leading batch axis is accepted everywhere.
"""

import numpy as np

from .errors import DegenerateInputError, DomainError, ShapeError

__all__ = [
    "mask_to_rgb",
    "rgb_to_mask",
    "histogram_bins",
    "otsu_threshold",
    "binarize",
]


def mask_to_rgb(m):
    """Replicate a soft mask into three identical channels (``m`` outer ``1_3``)."""
    m = np.asarray(m)
    if not np.all(np.isfinite(m)) or m.size and (m.min() < 0 or m.max() > 1):
        raise DomainError("mask values must be finite and lie in [0, 1]")
    return np.repeat(m[..., None], 3, axis=-1)


def rgb_to_mask(y):
    """Collapse a 3-channel image to a soft mask by averaging the channels."""
    y = np.asarray(y)
    if y.ndim < 3 or y.shape[-1] != 3:
        raise ShapeError(f"expected a trailing channel axis of size 3, got shape {y.shape}")
    if y.dtype == np.float64:
        a, b, c = y[..., 0], y[..., 1], y[..., 2]
        # offset form: replicated channels give back ``a`` bit-for-bit
        return a + ((b - a) + (c - a)) / 3
    # float32 (and integer) channels sum exactly in float64; one rounding on the way back
    out = y.astype(np.float64).sum(axis=-1) / 3
    return out.astype(y.dtype) if y.dtype == np.float32 else out


def histogram_bins(m, bins=256):
    """Bucket index of every value.

    Bucket ``k`` holds values in ``(k/bins, (k+1)/bins]`` (bucket 0 also takes
    0.0), so a pixel falls below the boundary ``k/bins`` exactly when its
    bucket index is below ``k``.  This keeps histogram splits and the strict
    ``value > thr`` rule of :func:`binarize` in agreement.
    """
    m = np.asarray(m, dtype=np.float64)
    idx = np.ceil(m * bins).astype(np.int64) - 1
    return np.clip(idx, 0, bins - 1)


def _best_split(counts):
    """Boundary index maximising between-class variance, lowest on ties.

    Works on integer counts with integer bucket levels ``2i + 1`` so that the
    comparison between candidates is exact.
    """
    counts = np.asarray(counts, dtype=np.int64)
    bins = counts.size
    levels = 2 * np.arange(bins, dtype=np.int64) + 1
    n0 = np.cumsum(counts)[:-1]
    s0 = np.cumsum(counts * levels)[:-1]
    n = int(counts.sum())
    s = int((counts * levels).sum())
    n1 = n - n0
    s1 = s - s0
    valid = (n0 > 0) & (n1 > 0)
    if not valid.any():
        raise DegenerateInputError("Otsu threshold needs values in at least two histogram buckets")
    # between-class variance is proportional to (s0*n1 - s1*n0)^2 / (n0*n1)
    num = s0 * n1 - s1 * n0
    den = n0 * n1
    score = np.where(valid, num.astype(np.float64) ** 2 / np.maximum(den, 1), -1.0)
    top = score.max()
    candidates = np.flatnonzero(score >= top * (1 - 1e-9))
    best = None
    for k in candidates:
        a, b = int(num[k]) ** 2, int(den[k])
        if best is None or a * best[2] > best[1] * b:
            best = (k, a, b)
    return int(best[0]) + 1


def otsu_threshold(m, bins=256):
    """Otsu threshold of a soft mask over a ``bins``-bucket histogram of [0, 1].

    Returns the bucket boundary ``k / bins`` that maximises the between-class
    variance; ties go to the lowest boundary.  Raises
    :class:`DegenerateInputError` when all values share one bucket.
    """
    m = np.asarray(m, dtype=np.float64)
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if not np.all(np.isfinite(m)):
        raise DomainError("mask contains non-finite values")
    counts = np.bincount(histogram_bins(m, bins).ravel(), minlength=bins)
    return _best_split(counts) / bins


def binarize(m, thr):
    """1 where ``m > thr``, else 0 (uint8)."""
    return (np.asarray(m) > thr).astype(np.uint8)
