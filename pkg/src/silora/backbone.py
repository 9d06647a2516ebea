"""Frozen latent autoencoder, prompt encoder and single-step U-Net.

The backbone is a :class:`BackboneBundle`: a registry of named float32
weights plus the geometry needed to run them.  All forward passes are plain
functions of that registry, so adaptors can be applied at call time and the
base weights are never touched after construction.

The shipped toy bundle mirrors the layout of a latent diffusion model at
desk scale: a convolutional encoder/decoder with spatial reduction ``f``, a
hash-seeded prompt embedder, and a small U-Net whose transformer block has
one self-attention and one cross-attention layer.
"""

import hashlib
import io
import json
import logging
import struct
import threading
from dataclasses import asdict, dataclass
from importlib import resources
from types import MappingProxyType

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, IncompatibleCheckpointError, ShapeError
from .lora import adapted_projection

log = logging.getLogger(__name__)

__all__ = [
    "ToyBackboneConfig",
    "AttentionSite",
    "BackboneBundle",
    "build_toy_backbone",
    "load_toy_backbone",
    "encode",
    "decode",
    "embed_prompt",
    "predict_latent",
    "calibrate_latent_scale",
    "pretrain_autoencoder",
    "pretrain_unet",
    "save_bundle",
    "load_bundle",
]

BUNDLE_MAGIC = b"SILORA-BB"
BUNDLE_VERSION = 1
TOY_FIXTURE = "toy_backbone.silora-bb"
CALIBRATION_SEED = 9001
CALIBRATION_SIZE = 64
# transformer blocks of the toy U-Net (one, on the full-resolution up path)
TRANSFORMER_BLOCKS = ("unet.up",)


@dataclass(frozen=True)
class ToyBackboneConfig:
    downsample: int = 4  # spatial reduction f
    latent_channels: int = 4
    width: int = 32  # attention width
    prompt_dim: int = 32  # d_t
    prompt_len: int = 8
    heads: int = 4
    hidden: int = 32  # autoencoder channels
    image_size: int = 64

    def validate(self):
        problems = []
        if self.downsample not in (2, 4, 8):
            problems.append(f"downsample must be 2, 4 or 8 (got {self.downsample})")
        if self.latent_channels < 1:
            problems.append("latent_channels must be >= 1")
        if self.width < 1 or self.width % self.heads:
            problems.append("width must be a positive multiple of heads")
        if self.width % 8:
            problems.append("width must be a multiple of 8 (group norm)")
        if self.prompt_dim < 1 or self.prompt_len < 1:
            problems.append("prompt_dim and prompt_len must be >= 1")
        if self.image_size % self.downsample:
            problems.append("image_size must be divisible by downsample")
        if problems:
            raise ConfigError("invalid toy backbone config: " + "; ".join(problems), problems)
        return self

    @property
    def latent_size(self):
        return self.image_size // self.downsample


@dataclass(frozen=True)
class AttentionSite:
    name: str
    d_in: int
    d_out: int


class BackboneBundle:
    """Immutable weights + geometry of the pretrained (or toy) model.

    ``weights`` is a read-only mapping of name to tensor.  ``latent_scale``
    multiplies raw encoder outputs so latents have unit variance on the
    calibration set; the decoder divides it back out.
    """

    def __init__(self, config, weights, latent_scale=1.0, seed=None):
        self.config = config.validate()
        self.seed = seed
        frozen = {}
        for name, w in weights.items():
            t = torch.as_tensor(w).detach().clone()
            t.requires_grad_(False)
            frozen[name] = t
        self.weights = MappingProxyType(frozen)
        self.latent_scale = float(latent_scale)
        self.frozen = True
        self._prompt_cache = {}
        self._lock = threading.Lock()
        self._hash = None

    @property
    def attention_sites(self):
        c = self.config
        sites = []
        for tb in TRANSFORMER_BLOCKS:
            for block, ctx_dim in ((f"{tb}.attn1", c.width), (f"{tb}.attn2", c.prompt_dim)):
                sites.append(AttentionSite(f"{block}.to_q", c.width, c.width))
                sites.append(AttentionSite(f"{block}.to_k", ctx_dim, c.width))
                sites.append(AttentionSite(f"{block}.to_v", ctx_dim, c.width))
                sites.append(AttentionSite(f"{block}.to_out", c.width, c.width))
        return sites

    @property
    def dtype(self):
        return next(iter(self.weights.values())).dtype

    def astype(self, dtype):
        """Copy of the bundle with every weight cast (e.g. to float64 for gradient checks)."""
        return BackboneBundle(
            self.config, {k: v.to(dtype) for k, v in self.weights.items()}, self.latent_scale, self.seed
        )

    def with_latent_scale(self, scale):
        return BackboneBundle(self.config, dict(self.weights), scale, self.seed)

    def weight_bytes(self):
        """Canonical little-endian float32 serialisation of all weights."""
        buf = io.BytesIO()
        for name in sorted(self.weights):
            buf.write(name.encode("utf-8"))
            buf.write(self.weights[name].detach().cpu().numpy().astype("<f4").tobytes())
        return buf.getvalue()

    def content_hash(self):
        if self._hash is None:
            h = hashlib.sha256()
            h.update(json.dumps(self._geometry(), sort_keys=True).encode("utf-8"))
            h.update(self.weight_bytes())
            self._hash = h.hexdigest()
        return self._hash

    def _geometry(self):
        return {
            "config": asdict(self.config),
            "latent_scale": self.latent_scale,
            "seed": self.seed,
            "attention_sites": [asdict(s) for s in self.attention_sites],
        }

    def __repr__(self):
        c = self.config
        return (
            f"BackboneBundle(f={c.downsample}, C_z={c.latent_channels}, d_t={c.prompt_dim}, "
            f"image_size={c.image_size}, latent_scale={self.latent_scale:.4f})"
        )


# --------------------------------------------------------------------------- weights


def _toy_weight_shapes(c):
    shapes = {}
    h = c.hidden
    n_down = int(np.log2(c.downsample))

    def conv(name, cin, cout, k, bias=True):
        shapes[f"{name}.weight"] = (cout, cin, k, k)
        if bias:
            shapes[f"{name}.bias"] = (cout,)

    def norm(name, ch):
        shapes[f"{name}.weight"] = (ch,)
        shapes[f"{name}.bias"] = (ch,)

    def linear(name, din, dout, bias):
        shapes[f"{name}.weight"] = (dout, din)
        if bias:
            shapes[f"{name}.bias"] = (dout,)

    conv("enc.conv_in", 3, h, 3)
    for i in range(n_down):
        conv(f"enc.down{i}", h, h, 4)
    conv("enc.mid", h, h, 3)
    conv("enc.conv_out", h, c.latent_channels, 1)

    conv("dec.conv_in", c.latent_channels, h, 3)
    conv("dec.mid", h, h, 3)
    for i in range(n_down):
        conv(f"dec.up{i}", h, h, 3)
    conv("dec.conv_out", h, 3, 3)

    w = c.width
    conv("unet.conv_in", c.latent_channels, w, 3)
    for blk in ("unet.res0", "unet.res1"):
        norm(f"{blk}.norm1", w)
        conv(f"{blk}.conv1", w, w, 3)
        norm(f"{blk}.norm2", w)
        conv(f"{blk}.conv2", w, w, 3)
    conv("unet.down", w, w, 4)
    conv("unet.merge", 2 * w, w, 1)
    for tb in TRANSFORMER_BLOCKS:
        for blk, ctx in ((f"{tb}.attn1", w), (f"{tb}.attn2", c.prompt_dim)):
            norm(f"{blk}.norm", w)
            linear(f"{blk}.to_q", w, w, bias=False)
            linear(f"{blk}.to_k", ctx, w, bias=False)
            linear(f"{blk}.to_v", ctx, w, bias=False)
            linear(f"{blk}.to_out", w, w, bias=True)
        norm(f"{tb}.ff.norm", w)
        linear(f"{tb}.ff.fc1", w, 4 * w, bias=True)
        linear(f"{tb}.ff.fc2", 4 * w, w, bias=True)
    norm("unet.norm_out", w)
    conv("unet.conv_out", w, c.latent_channels, 3)
    return shapes


def _init_weights(c, seed):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xBB,)))
    weights = {}
    for name, shape in _toy_weight_shapes(c).items():
        if name.endswith(".bias"):
            # norm shifts start at zero; conv/linear biases get a small draw
            if ".norm" in name:
                arr = np.zeros(shape)
            else:
                arr = rng.uniform(-0.05, 0.05, size=shape)
        elif len(shape) == 1:
            arr = np.ones(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(3.0 / fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
        weights[name] = torch.from_numpy(arr.astype(np.float32))
    return weights


def build_toy_backbone(cfg=None, seed=0, calibrate=True):
    """Randomly initialised toy bundle, deterministic in ``seed``.

    With ``calibrate`` the latent scale is fitted on the synthetic
    calibration set so that encoded latents have unit variance.
    """
    cfg = (cfg or ToyBackboneConfig()).validate()
    bundle = BackboneBundle(cfg, _init_weights(cfg, seed), 1.0, seed)
    if calibrate:
        bundle = bundle.with_latent_scale(calibrate_latent_scale(bundle, _calibration_images(cfg)))
    return bundle


def _calibration_images(cfg):
    from .data import synth_generate

    samples = synth_generate(CALIBRATION_SIZE, cfg.image_size, seed=CALIBRATION_SEED)
    return np.stack([s.image for s in samples])


def load_toy_backbone():
    """The shipped toy bundle with a reconstruction-pretrained autoencoder."""
    ref = resources.files("silora").joinpath("fixtures", TOY_FIXTURE)
    with ref.open("rb") as fh:
        return read_bundle(fh)


# --------------------------------------------------------------------------- forward passes


def _as_images(x, bundle):
    """Accept HWC / NHWC numpy or NCHW / CHW tensors; return NCHW tensor + batched flag."""
    if isinstance(x, np.ndarray):
        t = torch.from_numpy(np.ascontiguousarray(x))
        if t.ndim == 3:
            t = t.permute(2, 0, 1)
        elif t.ndim == 4:
            t = t.permute(0, 3, 1, 2)
    else:
        t = x
    batched = t.ndim == 4
    if not batched:
        t = t.unsqueeze(0)
    size = bundle.config.image_size
    if t.ndim != 4 or t.shape[1] != 3 or t.shape[2] != size or t.shape[3] != size:
        raise ShapeError(f"expected 3x{size}x{size} image(s), got shape {tuple(x.shape)}")
    return t.to(bundle.dtype), batched


def _conv(W, name, x, stride=1, padding=0):
    return F.conv2d(x, W[f"{name}.weight"], W.get(f"{name}.bias"), stride=stride, padding=padding)


def _encode_raw(W, c, x):
    h = F.silu(_conv(W, "enc.conv_in", x, padding=1))
    for i in range(int(np.log2(c.downsample))):
        h = F.silu(_conv(W, f"enc.down{i}", h, stride=2, padding=1))
    h = h + F.silu(_conv(W, "enc.mid", h, padding=1))
    return _conv(W, "enc.conv_out", h)


def _decode_raw(W, c, z):
    h = F.silu(_conv(W, "dec.conv_in", z, padding=1))
    h = h + F.silu(_conv(W, "dec.mid", h, padding=1))
    for i in range(int(np.log2(c.downsample))):
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = F.silu(_conv(W, f"dec.up{i}", h, padding=1))
    return torch.sigmoid(_conv(W, "dec.conv_out", h, padding=1))


def encode(x, bundle):
    """Scaled latent ``E(x)``; images in, ``(N, C_z, H/f, W/f)`` latents out.

    Unbatched input gives an unbatched ``(C_z, h, w)`` latent.
    """
    t, batched = _as_images(x, bundle)
    z = _encode_raw(bundle.weights, bundle.config, t) * bundle.latent_scale
    return z if batched else z[0]


def decode(z, bundle):
    """Image ``D(z)`` as an ``(N, 3, H, W)`` tensor with values in [0, 1]."""
    c = bundle.config
    z = torch.as_tensor(z)
    batched = z.ndim == 4
    if not batched:
        z = z.unsqueeze(0)
    if tuple(z.shape[1:]) != (c.latent_channels, c.latent_size, c.latent_size):
        raise ShapeError(
            f"expected latent {c.latent_channels}x{c.latent_size}x{c.latent_size}, got {tuple(z.shape)}"
        )
    y = _decode_raw(bundle.weights, c, z.to(bundle.dtype) / bundle.latent_scale).clamp(0.0, 1.0)
    return y if batched else y[0]


def embed_prompt(t, bundle):
    """Deterministic ``(L, d_t)`` embedding of a prompt string, cached per bundle."""
    if not isinstance(t, str) or not t:
        raise ValueError("prompt must be a nonempty string")
    with bundle._lock:
        cached = bundle._prompt_cache.get(t)
        if cached is None:
            digest = hashlib.sha256(t.encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            c = bundle.config
            emb = rng.standard_normal((c.prompt_len, c.prompt_dim)).astype(np.float32)
            cached = torch.from_numpy(emb)
            bundle._prompt_cache[t] = cached
    return cached.to(bundle.dtype)


def _group_norm(W, name, x, groups=8):
    return F.group_norm(x, groups, W[f"{name}.weight"], W[f"{name}.bias"], eps=1e-5)


def _layer_norm(W, name, x):
    return F.layer_norm(x, x.shape[-1:], W[f"{name}.weight"], W[f"{name}.bias"], eps=1e-5)


def _resblock(W, name, x):
    h = _conv(W, f"{name}.conv1", F.silu(_group_norm(W, f"{name}.norm1", x)), padding=1)
    h = _conv(W, f"{name}.conv2", F.silu(_group_norm(W, f"{name}.norm2", h)), padding=1)
    return x + h


def _attention(W, name, x, ctx, heads, adaptors):
    def proj(inp, site):
        key = f"{name}.{site}"
        return adapted_projection(inp, W[f"{key}.weight"], adaptors.get(key) if adaptors else None)

    n, t, d = x.shape
    ctx = x if ctx is None else ctx
    q = proj(x, "to_q")
    k = proj(ctx, "to_k")
    v = proj(ctx, "to_v")
    dh = d // heads
    q = q.reshape(n, t, heads, dh).transpose(1, 2)
    k = k.reshape(n, -1, heads, dh).transpose(1, 2)
    v = v.reshape(n, -1, heads, dh).transpose(1, 2)
    attn = torch.softmax(q @ k.transpose(-1, -2) / dh**0.5, dim=-1)
    o = (attn @ v).transpose(1, 2).reshape(n, t, d)
    return proj(o, "to_out") + W[f"{name}.to_out.bias"]


def _transformer(W, name, h, ctx, heads, adaptors):
    """Self-attention, cross-attention on ``ctx``, feed-forward; pre-norm residuals over spatial tokens."""
    n, ch, hh, ww = h.shape
    x = h.flatten(2).transpose(1, 2)
    x = x + _attention(W, f"{name}.attn1", _layer_norm(W, f"{name}.attn1.norm", x), None, heads, adaptors)
    x = x + _attention(W, f"{name}.attn2", _layer_norm(W, f"{name}.attn2.norm", x), ctx, heads, adaptors)
    f = F.linear(_layer_norm(W, f"{name}.ff.norm", x), W[f"{name}.ff.fc1.weight"], W[f"{name}.ff.fc1.bias"])
    x = x + F.linear(F.gelu(f), W[f"{name}.ff.fc2.weight"], W[f"{name}.ff.fc2.bias"])
    return x.transpose(1, 2).reshape(n, ch, hh, ww)


def _unet(W, c, z, p, adaptors):
    n = z.shape[0]
    ctx = p.expand(n, *p.shape[-2:]) if p.ndim == 2 else p
    h = _conv(W, "unet.conv_in", z, padding=1)
    h = _resblock(W, "unet.res0", h)
    d = F.silu(_conv(W, "unet.down", h, stride=2, padding=1))
    d = _resblock(W, "unet.res1", d)
    u = F.interpolate(d, scale_factor=2, mode="nearest")
    h = _conv(W, "unet.merge", torch.cat([h, u], dim=1))
    h = _transformer(W, "unet.up", h, ctx, c.heads, adaptors)
    return _conv(W, "unet.conv_out", F.silu(_group_norm(W, "unet.norm_out", h)), padding=1)


def _check_adaptors(bundle, adaptors):
    if adaptors is None or len(adaptors) == 0:
        return None
    expected = {s.name: s for s in bundle.attention_sites}
    names = set(adaptors.site_names)
    if names != set(expected):
        missing = sorted(set(expected) - names)
        extra = sorted(names - set(expected))
        raise ConfigError(f"adaptor sites do not match the bundle (missing={missing}, unknown={extra})")
    for a in adaptors:
        s = expected[a.name]
        if (a.d_in, a.d_out) != (s.d_in, s.d_out):
            raise ConfigError(f"adaptor {a.name} is {a.d_out}x{a.d_in}, site is {s.d_out}x{s.d_in}")
    return adaptors


def predict_latent(z, p, bundle, adaptors=None):
    """One U-Net forward pass: ``U_theta(z, p)``.

    ``z`` is ``(C_z, h, w)`` or batched; ``p`` is a prompt embedding from
    :func:`embed_prompt`.  Adaptor deltas are applied at the attention sites;
    there is no timestep input and no iteration.
    """
    c = bundle.config
    adaptors = _check_adaptors(bundle, adaptors)
    batched = z.ndim == 4
    if not batched:
        z = z.unsqueeze(0)
    if tuple(z.shape[1:]) != (c.latent_channels, c.latent_size, c.latent_size):
        raise ShapeError(f"latent shape {tuple(z.shape)} does not match bundle geometry")
    if tuple(p.shape[-2:]) != (c.prompt_len, c.prompt_dim):
        raise ShapeError(f"prompt embedding shape {tuple(p.shape)} does not match bundle geometry")
    out = _unet(bundle.weights, c, z, p, adaptors)
    return out if batched else out[0]


# --------------------------------------------------------------------------- calibration / pretraining


@torch.no_grad()
def calibrate_latent_scale(bundle, images):
    """Global scalar making raw encoder outputs unit-variance on ``images``."""
    t, _ = _as_images(np.asarray(images, dtype=np.float32), bundle)
    raw = _encode_raw(bundle.weights, bundle.config, t)
    std = float(raw.double().std(unbiased=False))
    if not np.isfinite(std) or std == 0:
        raise ValueError("encoder output has zero variance on the calibration set")
    return 1.0 / std


def pretrain_autoencoder(bundle, images, steps=3000, batch_size=16, lr=2e-3, seed=0, log_every=500):
    """Fit the encoder/decoder by plain L1 reconstruction and return a new frozen bundle.

    ``images`` is an ``(N, H, W, 3)`` array; include mask renderings so that
    encoded targets decode back cleanly.  U-Net weights are copied through
    unchanged and the latent scale is recalibrated at the end.
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    c = bundle.config
    data = torch.from_numpy(np.asarray(images, dtype=np.float32)).permute(0, 3, 1, 2).contiguous()
    params = {k: v.clone().requires_grad_(True) for k, v in bundle.weights.items() if k.startswith(("enc.", "dec."))}
    opt = torch.optim.Adam(params.values(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, steps)
    for step in range(steps):
        idx = rng.choice(len(data), size=batch_size, replace=False)
        x = data[idx]
        recon = _decode_raw(params, c, _encode_raw(params, c, x))
        loss = (recon - x).abs().mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        if log_every and (step % log_every == 0 or step == steps - 1):
            log.info("autoencoder step %d  L1 %.4f", step, loss.item())
    weights = dict(bundle.weights)
    weights.update({k: v.detach() for k, v in params.items()})
    new = BackboneBundle(c, weights, 1.0, bundle.seed)
    return new.with_latent_scale(calibrate_latent_scale(new, _calibration_images(c)))


# Generic image-to-image tasks the base U-Net learns before any adaptor is
# attached, each keyed by its prompt.  None of them is segmentation.
UNET_PRETRAIN_TASKS = {
    "a photo": lambda x: x,
    "grayscale": lambda x: np.repeat(x.mean(-1, keepdims=True), 3, axis=-1),
    "negative": lambda x: 1.0 - x,
    "bgr": lambda x: x[..., ::-1],
    "high contrast": lambda x: np.clip((x - 0.5) * 2.5 + 0.5, 0.0, 1.0),
}


def pretrain_unet(bundle, images, steps=2000, batch_size=16, lr=2e-3, seed=0, max_sigma=1.5, log_every=500):
    """Fit the base U-Net as a prompt-conditioned single-step latent denoiser.

    For every prompt in :data:`UNET_PRETRAIN_TASKS` the target is the
    encoding of the transformed image and the input is the encoding of the
    original plus Gaussian noise with a per-sample std in ``[0, max_sigma]``.
    This stands in for the generative pretraining of a real diffusion
    U-Net.  The autoencoder must already be trained; only ``unet.*`` weights
    change.
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    c = bundle.config
    images = np.asarray(images, dtype=np.float32)

    @torch.no_grad()
    def enc(x):
        x = np.ascontiguousarray(x, dtype=np.float32)
        return torch.cat([encode(x[i : i + 256], bundle) for i in range(0, len(x), 256)])

    z_in = enc(images)
    targets = torch.stack([enc(f(images)) for f in UNET_PRETRAIN_TASKS.values()])
    prompts = torch.stack([embed_prompt(t, bundle) for t in UNET_PRETRAIN_TASKS])
    params = {k: v.clone().requires_grad_(True) for k, v in bundle.weights.items() if k.startswith("unet.")}
    W = dict(bundle.weights)
    W.update(params)
    opt = torch.optim.Adam(params.values(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, steps)
    for step in range(steps):
        idx = torch.from_numpy(rng.choice(len(z_in), size=batch_size, replace=False))
        task = torch.from_numpy(rng.integers(0, len(prompts), size=batch_size))
        sigma = torch.from_numpy(rng.uniform(0, max_sigma, size=(batch_size, 1, 1, 1)).astype(np.float32))
        eps = torch.from_numpy(rng.standard_normal((batch_size, *z_in.shape[1:])).astype(np.float32))
        out = _unet(W, c, z_in[idx] + sigma * eps, prompts[task], None)
        loss = ((out - targets[task, idx]) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        if log_every and (step % log_every == 0 or step == steps - 1):
            log.info("unet step %d  MSE %.4f", step, loss.item())
    W.update({k: v.detach() for k, v in params.items()})
    return BackboneBundle(c, W, bundle.latent_scale, bundle.seed)


# --------------------------------------------------------------------------- serialisation


def write_bundle(fh, bundle):
    header = json.dumps(bundle._geometry(), sort_keys=True).encode("utf-8")
    fh.write(BUNDLE_MAGIC)
    fh.write(struct.pack("<HI", BUNDLE_VERSION, len(header)))
    fh.write(header)
    fh.write(struct.pack("<I", len(bundle.weights)))
    for name in sorted(bundle.weights):
        arr = bundle.weights[name].detach().cpu().numpy().astype("<f4")
        key = name.encode("utf-8")
        fh.write(struct.pack("<HB", len(key), arr.ndim))
        fh.write(key)
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_bundle(fh):
    if fh.read(len(BUNDLE_MAGIC)) != BUNDLE_MAGIC:
        raise IncompatibleCheckpointError("not a silora bundle file (bad magic)")
    version, hlen = struct.unpack("<HI", fh.read(6))
    if version != BUNDLE_VERSION:
        raise IncompatibleCheckpointError(f"unsupported bundle format version {version}")
    geom = json.loads(fh.read(hlen).decode("utf-8"))
    (n,) = struct.unpack("<I", fh.read(4))
    weights = {}
    for _ in range(n):
        klen, ndim = struct.unpack("<HB", fh.read(3))
        name = fh.read(klen).decode("utf-8")
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        count = int(np.prod(shape))
        arr = np.frombuffer(fh.read(4 * count), dtype="<f4").astype(np.float32).reshape(shape)
        weights[name] = torch.from_numpy(arr)
    cfg = ToyBackboneConfig(**geom["config"])
    expected = _toy_weight_shapes(cfg)
    if set(expected) != set(weights) or any(tuple(weights[k].shape) != v for k, v in expected.items()):
        raise IncompatibleCheckpointError("bundle weights do not match the declared geometry")
    return BackboneBundle(cfg, weights, geom["latent_scale"], geom.get("seed"))


def save_bundle(bundle, path):
    with open(path, "wb") as fh:
        write_bundle(fh, bundle)


def load_bundle(path):
    """Load a bundle file; ``"toy"`` selects the shipped pretrained toy bundle."""
    if str(path) == "toy":
        return load_toy_backbone()
    with open(path, "rb") as fh:
        return read_bundle(fh)
