"""Rebuild the shipped toy backbone fixture.

Two stages, both on synthetic blade images, their mask renderings and MixUp
blends of the two:

1. the autoencoder, by plain L1 reconstruction;
2. the base U-Net, as a prompt-conditioned single-step latent denoiser over
   a handful of generic image transforms (see ``UNET_PRETRAIN_TASKS``).

The result is frozen and written to ``src/silora/fixtures/toy_backbone.silora-bb``.
Takes about 40 minutes on one CPU core.

    python scripts/pretrain_toy_backbone.py [--ae-steps 3000] [--unet-steps 3000] [--seed 0]
"""

import argparse
import logging
from pathlib import Path

import numpy as np
import torch

from silora.backbone import TOY_FIXTURE, build_toy_backbone, pretrain_autoencoder, pretrain_unet, save_bundle
from silora.data import synth_generate
from silora.maskops import mask_to_rgb

PRETRAIN_SEED = 777


def pretraining_images(n, size, seed):
    samples = synth_generate(n, size, seed=seed)
    images = np.stack([s.image for s in samples])
    masks = np.stack([mask_to_rgb(s.mask.astype(np.float32)) for s in samples])
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    lam = rng.beta(0.4, 0.4, size=(n, 1, 1, 1)).astype(np.float32)
    mixed_images = lam * images + (1 - lam) * images[perm]
    mixed_masks = lam * masks + (1 - lam) * masks[perm]
    return np.concatenate([images, masks, mixed_images, mixed_masks]).astype(np.float32)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ae-steps", type=int, default=3000)
    ap.add_argument("--unet-steps", type=int, default=3000)
    ap.add_argument("--n", type=int, default=512)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "src/silora/fixtures" / TOY_FIXTURE)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    torch.set_num_threads(1)

    bundle = build_toy_backbone(seed=args.seed)
    images = pretraining_images(args.n, bundle.config.image_size, PRETRAIN_SEED)
    bundle = pretrain_autoencoder(bundle, images, steps=args.ae_steps, seed=args.seed)
    bundle = pretrain_unet(bundle, images, steps=args.unet_steps, seed=args.seed)
    save_bundle(bundle, args.out)
    print(f"wrote {args.out}  hash={bundle.content_hash()[:16]}  latent_scale={bundle.latent_scale:.5f}")


if __name__ == "__main__":
    main()
