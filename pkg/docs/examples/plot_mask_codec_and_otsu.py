"""
Masks, the 3-channel codec and Otsu thresholding
================================================

A binary mask is replicated to three channels so the frozen autoencoder can
encode it.  Predictions come back as RGB, get averaged to one channel and are
cut with a per-image Otsu threshold.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from silora.data import synth_generate
from silora.maskops import binarize, mask_to_rgb, otsu_threshold, rgb_to_mask

sample = synth_generate(1, 64, seed=4)[0]

# %%
# The codec is exact: averaging the replicated channels gives the mask back.

rgb = mask_to_rgb(sample.mask.astype(np.float64))
assert np.array_equal(rgb_to_mask(rgb), sample.mask)

# %%
# A blurred, noisy version of the mask stands in for a model prediction.

rng = np.random.default_rng(0)
soft = sample.mask.astype(np.float64)
for _ in range(3):
    soft = (soft + np.roll(soft, 1, 0) + np.roll(soft, 1, 1) + np.roll(soft, -1, 0) + np.roll(soft, -1, 1)) / 5
soft = np.clip(soft + rng.normal(0, 0.05, soft.shape), 0, 1)

thr = otsu_threshold(soft)
pred = binarize(soft, thr)
print(f"Otsu threshold {thr:.4f}, foreground {pred.mean():.3f} vs true {sample.mask.mean():.3f}")

fig, axes = plt.subplots(1, 4, figsize=(10, 3))
for ax, im, title in zip(axes, [sample.image, sample.mask, soft, pred], ["image", "mask", "soft", f"> {thr:.3f}"]):
    ax.imshow(im, cmap=None if im.ndim == 3 else "gray", vmin=0, vmax=1)
    ax.set_title(title)
    ax.axis("off")
fig.savefig("mask_codec_and_otsu.png", dpi=100, bbox_inches="tight")
