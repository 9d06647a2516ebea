"""
Low-rank adaptors on the attention projections
==============================================

Every q/k/v/out projection of the U-Net's self- and cross-attention gets a
pair of factors A (r x d_in) and B (d_out x r).  B starts at zero, so a fresh
adaptor set leaves the frozen model's output untouched.
"""

import numpy as np
import torch

from silora.backbone import embed_prompt, load_toy_backbone, predict_latent
from silora.lora import init_adaptor_set, trainable_parameters

bundle = load_toy_backbone()
adaptors = init_adaptor_set(bundle, rank=8, seed=0)

for a in adaptors:
    print(f"{a.name:24s} A {tuple(a.A.shape)}  B {tuple(a.B.shape)}")
n = sum(p.numel() for p in trainable_parameters(adaptors))
print(f"{len(adaptors)} sites, {n} trainable numbers; the bundle itself has "
      f"{sum(w.numel() for w in bundle.weights.values())}")

# %%
# Zero-init neutrality, then a perturbed B to show the delta reaching the output.

z = torch.from_numpy(np.random.default_rng(1).standard_normal((4, 16, 16)).astype(np.float32))
p = embed_prompt("segmentation map", bundle)
with torch.no_grad():
    base = predict_latent(z, p, bundle)
    print("fresh adaptors change nothing:", torch.equal(base, predict_latent(z, p, bundle, adaptors)))
    for a in adaptors:
        a.B.normal_(0, 0.05)
    print("after perturbing B, max change:", float((predict_latent(z, p, bundle, adaptors) - base).abs().max()))
