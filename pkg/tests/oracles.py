"""Slow, independent reference implementations used only by the tests."""

import math
from fractions import Fraction
from itertools import accumulate

import numpy as np


def confusion_loop(pred, gt):
    tp = fp = fn = tn = 0
    h, w = len(gt), len(gt[0])
    for i in range(h):
        for j in range(w):
            p, g = bool(pred[i][j]), bool(gt[i][j])
            if p and g:
                tp += 1
            elif p:
                fp += 1
            elif g:
                fn += 1
            else:
                tn += 1
    return tp, fp, fn, tn


def metrics_from_counts(tp, fp, fn, tn):
    """Textbook formulas with the documented empty-denominator conventions."""

    def pct(num, den, empty_ok):
        if den == 0:
            return 100.0 if empty_ok else 0.0
        return 100.0 * num / den

    total = tp + fp + fn + tn
    p = pct(tp, tp + fp, fn == 0)
    r = pct(tp, tp + fn, fp == 0)
    f1 = pct(2 * tp, 2 * tp + fp + fn, True)
    iou_fg = pct(tp, tp + fp + fn, True)
    iou_bg = pct(tn, tn + fp + fn, True)
    return {
        "accuracy": 100.0 * (tp + tn) / total,
        "precision": p,
        "recall": r,
        "f1": f1,
        "iou_blade": iou_fg,
        "iou_background": iou_bg,
        "miou": (iou_fg + iou_bg) / 2,
    }


def channel_mean_loop(y):
    """Exact per-pixel mean of a float32 (H, W, 3) image, correctly rounded."""
    h, w, _ = y.shape
    out = np.empty((h, w), dtype=np.float32)
    for i in range(h):
        for j in range(w):
            s = sum(Fraction(float(v)) for v in y[i, j])
            out[i, j] = np.float32(float(s / 3))
    return out


def otsu_bruteforce(m, bins=256):
    """Exhaustive between-class-variance search in exact rational arithmetic.

    Pixel values are quantised to bucket centres ``(i + 1/2) / bins`` where
    bucket ``i`` covers ``(i/bins, (i+1)/bins]``.  Every boundary ``k/bins``
    for ``k = 1 .. bins-1`` is scored by ``w0 * w1 * (mu0 - mu1)^2``; the
    lowest boundary with the maximal score wins.
    """
    counts = [0] * bins
    for v in np.asarray(m, dtype=np.float64).ravel().tolist():
        i = min(max(math.ceil(v * bins) - 1, 0), bins - 1)
        counts[i] += 1
    n = sum(counts)
    weighted = [Fraction(2 * i + 1, 2 * bins) * c for i, c in enumerate(counts)]
    cum_n = list(accumulate(counts))
    cum_s = list(accumulate(weighted))
    best_k, best = None, Fraction(-1)
    for k in range(1, bins):
        n0 = cum_n[k - 1]
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            continue
        mu0 = cum_s[k - 1] / n0
        mu1 = (cum_s[-1] - cum_s[k - 1]) / n1
        var = Fraction(n0, n) * Fraction(n1, n) * (mu0 - mu1) ** 2
        if var > best:
            best_k, best = k, var
    return None if best_k is None else best_k / bins


def quantile_inclusive(values, q):
    v = sorted(values)
    h = (len(v) - 1) * q
    lo = math.floor(h)
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (h - lo) * (v[hi] - v[lo])
