"""SI-LoRA training: latent MSE objective, dual-space augmentation, AdamW loop.

One training step::

    x', m'  = MixUp(batch)                          (image space)
    z_in    = E(x') + sigma * eps                   (latent space)
    z_tgt   = E(m' replicated to 3 channels)
    loss    = mean((U_theta(z_in, T(prompt)) - z_tgt)^2)

Only the adaptor factors receive gradients.  Prediction runs the same
pipeline without augmentation, decodes, averages channels and applies a
per-image Otsu threshold.
"""

import hashlib
import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import augment as aug
from .augment import AugmentPolicy
from .backbone import decode, embed_prompt, encode, predict_latent
from .errors import DegenerateInputError, IncompatibleCheckpointError, NumericalError
from .lora import init_adaptor_set, read_adaptors, trainable_parameters, write_adaptors
from .maskops import binarize, mask_to_rgb, otsu_threshold, rgb_to_mask

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "RngStreams",
    "Checkpoint",
    "make_optimizer",
    "latent_loss",
    "training_step",
    "train",
    "predict_soft_masks",
    "predict_mask",
    "save_checkpoint",
    "load_checkpoint",
]

DEFAULT_PROMPT = "segmentation map"
FALLBACK_THRESHOLD = 0.5
TRAIN_MAGIC = b"SILORA-TR"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-2
    batch_size: int = 2
    epochs: int = 30
    rank: int = 8
    alpha: float = None  # LoRA scale; None means alpha = rank
    prompt: str = DEFAULT_PROMPT
    image_size: int = 512
    seed: int = 0
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    lr_schedule: str = "constant"
    checkpoint_every: int = 0  # epochs; 0 disables intermediate checkpoints

    def __post_init__(self):
        problems = []
        for key in ("lr", "weight_decay"):
            if getattr(self, key) < 0:
                problems.append(f"{key} must be >= 0")
        for key in ("batch_size", "epochs", "rank", "image_size"):
            if getattr(self, key) < 1:
                problems.append(f"{key} must be >= 1")
        if self.alpha is not None and self.alpha <= 0:
            problems.append("alpha must be positive")
        if not self.prompt:
            problems.append("prompt must be nonempty")
        if self.lr_schedule not in ("constant", "cosine"):
            problems.append(f"unknown lr_schedule {self.lr_schedule!r}")
        if problems:
            raise ValueError("; ".join(problems))

    @classmethod
    def toy(cls, **overrides):
        """Paper hyperparameters at the toy backbone's 64x64 resolution."""
        return cls(image_size=64, **overrides)

    def lr_at(self, step, total_steps):
        if self.lr_schedule == "cosine" and total_steps > 0:
            return self.lr * 0.5 * (1 + math.cos(math.pi * min(step, total_steps) / total_steps))
        return self.lr

    def to_dict(self):
        d = asdict(self)
        d["augment"]["beta"] = list(self.augment.beta)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        a = dict(d.pop("augment", {}))
        if "beta" in a:
            a["beta"] = tuple(a["beta"])
        return cls(augment=AugmentPolicy(**a), **d)


class RngStreams:
    """Independent generators for MixUp draws and latent noise.

    Both derive from the run seed, so toggling one augmentation leaves the
    other's draws unchanged.  Per-epoch shuffling uses its own seed-derived
    generator (:meth:`epoch_order`).
    """

    def __init__(self, seed):
        self.seed = int(seed)
        self.mixup = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(2,)))
        self.noise = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(3,)))

    def epoch_order(self, epoch, n):
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(1, epoch)))
        return rng.permutation(n)

    def state(self):
        return {"mixup": self.mixup.bit_generator.state, "noise": self.noise.bit_generator.state}

    def set_state(self, state):
        self.mixup.bit_generator.state = state["mixup"]
        self.noise.bit_generator.state = state["noise"]


@dataclass
class Checkpoint:
    adaptors: object
    config: TrainConfig
    bundle_hash: str
    step: int = 0
    rng_state: dict = None
    loss_history: list = field(default_factory=list)
    optimizer_state: dict = None
    data_order_hash: str = ""

    def epoch_losses(self, steps_per_epoch):
        """Mean step loss of each (possibly partial) epoch."""
        h = self.loss_history
        return [float(np.mean(h[i : i + steps_per_epoch])) for i in range(0, len(h), steps_per_epoch)]


def make_optimizer(adaptors, cfg):
    """AdamW over the adaptor factors; decay is decoupled and scaled by the step size."""
    return torch.optim.AdamW(
        trainable_parameters(adaptors),
        lr=cfg.lr,
        betas=(0.9, 0.999),
        eps=1e-8,
        weight_decay=cfg.weight_decay,
        foreach=False,
    )


def latent_loss(pred, target, reduction="mean"):
    """Squared error accumulated in float64; ``"none"`` gives one value per sample."""
    err = (pred.double() - target.double()) ** 2
    if reduction == "none":
        return err.flatten(1).mean(dim=1)
    return err.mean()


def _stack_images(images):
    return torch.from_numpy(np.ascontiguousarray(np.stack(images).astype(np.float32))).permute(0, 3, 1, 2)


@torch.no_grad()
def _encode_targets(masks, bundle):
    rgb = np.stack([mask_to_rgb(np.asarray(m, dtype=np.float32)) for m in masks])
    return encode(rgb, bundle)


def training_step(batch, bundle, adaptors, optimizer, cfg, rngs, prompt_emb=None, target_cache=None, step=None):
    """One optimisation step on ``batch`` (a list of ``ImageSample``); returns the loss."""
    policy = cfg.augment
    pairs = aug.augment_batch(batch, policy, rngs.mixup)
    with torch.no_grad():
        z = encode(_stack_images([x for x, _ in pairs]), bundle)
        if policy.latent_noise:
            z = aug.inject_latent_noise(z, policy.sigma, rngs.noise)
        if target_cache is not None and not policy.mixup:
            missing = [s for s in batch if s.id not in target_cache]
            if missing:
                for s, t in zip(missing, _encode_targets([s.mask for s in missing], bundle)):
                    target_cache[s.id] = t
            target = torch.stack([target_cache[s.id] for s in batch])
        else:
            target = _encode_targets([m for _, m in pairs], bundle)
    if prompt_emb is None:
        prompt_emb = embed_prompt(cfg.prompt, bundle)
    pred = predict_latent(z, prompt_emb, bundle, adaptors)
    loss = latent_loss(pred, target)
    if not torch.isfinite(loss):
        ids = [s.id for s in batch]
        raise NumericalError(f"non-finite loss {loss.item()} at step {step} (seed {cfg.seed}, batch {ids})")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return loss.item()


def train(dataset, bundle, cfg, resume=None, max_steps=None, checkpoint_dir=None, on_epoch=None):
    """Train adaptors on ``dataset`` and return the final :class:`Checkpoint`.

    ``resume`` continues from a checkpoint of the same run; ``max_steps``
    stops early after that many total steps.  Every ``cfg.checkpoint_every``
    epochs a checkpoint is written to ``checkpoint_dir``.  ``on_epoch`` is
    called as ``on_epoch(epoch, mean_loss)``.
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    n = len(dataset)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    if max_steps is not None:
        total_steps = min(total_steps, max_steps)

    rngs = RngStreams(cfg.seed)
    if resume is None:
        adaptors = init_adaptor_set(bundle, cfg.rank, cfg.alpha, seed=cfg.seed)
        ckpt = Checkpoint(adaptors, cfg, bundle.content_hash())
    else:
        if resume.bundle_hash != bundle.content_hash():
            raise IncompatibleCheckpointError("checkpoint was trained against a different bundle")
        ckpt = resume
        adaptors = resume.adaptors
        if resume.rng_state is not None:
            rngs.set_state(resume.rng_state)
    optimizer = make_optimizer(adaptors, cfg)
    if resume is not None and resume.optimizer_state is not None:
        optimizer.load_state_dict(resume.optimizer_state)

    prompt_emb = embed_prompt(cfg.prompt, bundle)
    target_cache = {} if not cfg.augment.mixup else None
    step = ckpt.step
    while step < total_steps:
        epoch, offset = divmod(step, steps_per_epoch)
        order = rngs.epoch_order(epoch, n)
        if offset == 0:
            # chained per epoch so resumed and uninterrupted runs agree
            ckpt.data_order_hash = hashlib.sha256(ckpt.data_order_hash.encode() + order.tobytes()).hexdigest()
        for b in range(offset, steps_per_epoch):
            if step >= total_steps:
                break
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            for group in optimizer.param_groups:
                group["lr"] = cfg.lr_at(step, total_steps)
            loss = training_step(
                [dataset[i] for i in idx], bundle, adaptors, optimizer, cfg, rngs, prompt_emb, target_cache, step
            )
            ckpt.loss_history.append(loss)
            step += 1
        ckpt.step = step
        ckpt.rng_state = rngs.state()
        ckpt.optimizer_state = optimizer.state_dict()
        if step % steps_per_epoch == 0:
            mean = float(np.mean(ckpt.loss_history[epoch * steps_per_epoch : step]))
            log.info("epoch %d  step %d  mean loss %.5f", epoch + 1, step, mean)
            if on_epoch is not None:
                on_epoch(epoch + 1, mean)
            if checkpoint_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(ckpt, f"{checkpoint_dir}/checkpoint_epoch{epoch + 1:03d}.silora-ad")
    ckpt.step = step
    ckpt.rng_state = rngs.state()
    ckpt.optimizer_state = optimizer.state_dict()
    return ckpt


# --------------------------------------------------------------------------- prediction


@torch.no_grad()
def predict_soft_masks(images, bundle, adaptors=None, prompt=DEFAULT_PROMPT, batch_size=16):
    """Channel-averaged decoded predictions, ``(N, H, W)`` float32 in [0, 1]."""
    images = np.asarray(images, dtype=np.float32)
    p = embed_prompt(prompt, bundle)
    out = []
    for i in range(0, len(images), batch_size):
        z = encode(images[i : i + batch_size], bundle)
        y = decode(predict_latent(z, p, bundle, adaptors), bundle)
        out.append(rgb_to_mask(y.permute(0, 2, 3, 1).cpu().numpy()))
    return np.concatenate(out)


def _threshold(soft):
    try:
        return otsu_threshold(soft)
    except DegenerateInputError:
        log.warning("constant prediction; falling back to threshold %.2f", FALLBACK_THRESHOLD)
        return FALLBACK_THRESHOLD


def predict_mask(x, bundle, adaptors=None, prompt=DEFAULT_PROMPT):
    """Binary mask for one ``(H, W, 3)`` image (or a stack of them)."""
    x = np.asarray(x, dtype=np.float32)
    single = x.ndim == 3
    soft = predict_soft_masks(x[None] if single else x, bundle, adaptors, prompt)
    masks = np.stack([binarize(s, _threshold(s)) for s in soft])
    return masks[0] if single else masks


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(ckpt, path):
    """Adaptor file followed by a training trailer (config, rng, optimizer moments)."""
    params = trainable_parameters(ckpt.adaptors)
    opt = ckpt.optimizer_state or {"state": {}}
    steps = []
    moments = io.BytesIO()
    for i, p in enumerate(params):
        st = opt["state"].get(i)
        steps.append(None if st is None else int(st["step"]))
        for key in ("exp_avg", "exp_avg_sq"):
            arr = torch.zeros_like(p) if st is None else st[key]
            moments.write(arr.detach().cpu().numpy().astype("<f4").tobytes())
    meta = {
        "config": ckpt.config.to_dict(),
        "bundle_hash": ckpt.bundle_hash,
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "loss_history": ckpt.loss_history,
        "data_order_hash": ckpt.data_order_hash,
        "optimizer_steps": steps,
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        write_adaptors(fh, ckpt.adaptors)
        fh.write(TRAIN_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(moments.getvalue())


def load_checkpoint(path, bundle=None):
    """Read a checkpoint; with ``bundle`` given, refuse one trained on another bundle."""
    with open(path, "rb") as fh:
        adaptors = read_adaptors(fh)
        if fh.read(len(TRAIN_MAGIC)) != TRAIN_MAGIC:
            raise IncompatibleCheckpointError(f"{path}: missing training record")
        (ln,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(ln).decode("utf-8"))
        if bundle is not None and meta["bundle_hash"] != bundle.content_hash():
            raise IncompatibleCheckpointError(
                f"{path}: trained against bundle {meta['bundle_hash'][:12]}, got {bundle.content_hash()[:12]}"
            )
        params = trainable_parameters(adaptors)
        state = {}
        for i, p in enumerate(params):
            arrs = []
            for _ in range(2):
                raw = fh.read(4 * p.numel())
                if len(raw) != 4 * p.numel():
                    raise IncompatibleCheckpointError(f"{path}: truncated optimizer state")
                arrs.append(torch.from_numpy(np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(p.shape)))
            if meta["optimizer_steps"][i] is not None:
                state[i] = {"step": torch.tensor(float(meta["optimizer_steps"][i])), "exp_avg": arrs[0], "exp_avg_sq": arrs[1]}
    cfg = TrainConfig.from_dict(meta["config"])
    opt_state = None
    if state:
        template = make_optimizer(adaptors, cfg).state_dict()
        template["state"] = state
        opt_state = template
    return Checkpoint(
        adaptors=adaptors,
        config=cfg,
        bundle_hash=meta["bundle_hash"],
        step=meta["step"],
        rng_state=meta["rng_state"],
        loss_history=list(meta["loss_history"]),
        optimizer_state=opt_state,
        data_order_hash=meta["data_order_hash"],
    )
