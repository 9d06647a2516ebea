"""Dual-space augmentation: MixUp on images/masks and Gaussian noise on latents.

Image-space mixing happens before encoding (:func:`augment_batch`); the
latent perturbation is applied by the trainer to the encoded input only
(:func:`inject_latent_noise`).  Every random draw comes from a caller-owned
``numpy.random.Generator``.
"""

import logging
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ShapeError

log = logging.getLogger(__name__)

__all__ = [
    "AugmentPolicy",
    "sample_lambda",
    "mixup",
    "inject_latent_noise",
    "augment_batch",
]


@dataclass(frozen=True)
class AugmentPolicy:
    mixup: bool = True
    latent_noise: bool = True
    beta: tuple = (0.4, 0.4)
    sigma: float = 1.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        a, b = self.beta
        if a <= 0 or b <= 0:
            raise ValueError("beta parameters must be positive")
        object.__setattr__(self, "beta", (float(a), float(b)))

    @classmethod
    def off(cls):
        return cls(mixup=False, latent_noise=False)


def sample_lambda(rng, alpha=0.4, beta=0.4):
    """Draw a MixUp coefficient from Beta(alpha, beta)."""
    if alpha <= 0 or beta <= 0:
        raise ValueError(f"Beta parameters must be positive, got ({alpha}, {beta})")
    return float(rng.beta(alpha, beta))


def mixup(a, b, lam):
    """Convex combination of two (image, mask) pairs with one coefficient.

    ``a`` and ``b`` are ``(image, mask)`` tuples or objects exposing
    ``.image`` and ``.mask``.  Returns ``(image, soft_mask)``.
    """
    xa, ma = _unpack(a)
    xb, mb = _unpack(b)
    if xa.shape != xb.shape or ma.shape != mb.shape:
        raise ShapeError(f"cannot mix samples of shapes {xa.shape} and {xb.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    x = lam * xa + (1 - lam) * xb
    m = lam * ma + (1 - lam) * mb
    return x.astype(xa.dtype, copy=False), m.astype(np.float32, copy=False)


def inject_latent_noise(z, sigma, rng):
    """``z + sigma * eps`` with a fresh standard-normal ``eps`` per element."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return z
    eps = rng.standard_normal(tuple(z.shape))
    if isinstance(z, torch.Tensor):
        return z + sigma * torch.from_numpy(eps).to(dtype=z.dtype, device=z.device)
    return z + sigma * eps.astype(np.asarray(z).dtype, copy=False)


def augment_batch(pairs, policy, rng):
    """Image-space half of the augmentation for one batch.

    With MixUp enabled each sample is mixed with the partner at the same
    position of a random permutation of the batch, using a fresh coefficient
    per sample.  Otherwise samples pass through with masks cast to float.
    """
    out_pairs = [_unpack(p) for p in pairs]
    if not policy.mixup:
        return [(x, m.astype(np.float32)) for x, m in out_pairs]
    if len(out_pairs) == 1:
        log.info("batch of one with MixUp enabled: sample is mixed with itself")
    partners = rng.permutation(len(out_pairs))
    out = []
    for i, j in enumerate(partners):
        lam = sample_lambda(rng, *policy.beta)
        out.append(mixup(out_pairs[i], out_pairs[j], lam))
    return out


def _unpack(sample):
    if hasattr(sample, "image"):
        return np.asarray(sample.image), np.asarray(sample.mask)
    x, m = sample
    return np.asarray(x), np.asarray(m)
