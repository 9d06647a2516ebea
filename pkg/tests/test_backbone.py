import hashlib
import io
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
import torch
from torch import nn

from silora import backbone as bb
from silora.backbone import (
    BackboneBundle,
    ToyBackboneConfig,
    build_toy_backbone,
    calibrate_latent_scale,
    decode,
    embed_prompt,
    encode,
    load_bundle,
    predict_latent,
    read_bundle,
    save_bundle,
    write_bundle,
)
from silora.data import synth_generate
from silora.errors import ConfigError, IncompatibleCheckpointError, ShapeError
from silora.lora import AdaptorSet, init_adaptor_set

# recorded once from the shipped fixture; a change means the fixture or the
# forward pass changed
GOLDEN_PREDICT_SHA256 = "a12ebefc71eddd98e4475308930ae387cb6fc16db91bae9e4b91eb0f708a426d"


def _random_adaptors(bundle, seed=0, rank=8):
    a = init_adaptor_set(bundle, rank=rank, seed=seed)
    g = torch.Generator().manual_seed(seed)
    for ad in a:
        ad.B = (0.1 * torch.randn(ad.B.shape, generator=g)).requires_grad_(True)
    return a


# --------------------------------------------------------------------------- geometry


def test_encode_decode_shapes(random_bundle, images):
    z = encode(images, random_bundle)
    assert z.shape == (len(images), 4, 16, 16)
    y = decode(z, random_bundle)
    assert y.shape == (len(images), 3, 64, 64)
    assert 0 <= float(y.min()) and float(y.max()) <= 1
    assert encode(images[0], random_bundle).shape == (4, 16, 16)
    assert decode(z[0], random_bundle).shape == (3, 64, 64)


def test_encode_accepts_nchw_tensor(random_bundle, images):
    t = torch.from_numpy(images).permute(0, 3, 1, 2)
    assert torch.equal(encode(t, random_bundle), encode(images, random_bundle))


def test_encode_rejects_wrong_size(random_bundle):
    with pytest.raises(ShapeError):
        encode(np.zeros((32, 32, 3), np.float32), random_bundle)
    with pytest.raises(ShapeError):
        encode(np.zeros((64, 64, 4), np.float32), random_bundle)


def test_decode_rejects_wrong_latent(random_bundle):
    with pytest.raises(ShapeError):
        decode(torch.zeros(1, 3, 16, 16), random_bundle)


def test_zero_latent_decodes_in_range(toy_bundle):
    y = decode(torch.zeros(4, 16, 16), toy_bundle)
    assert torch.isfinite(y).all()
    assert 0 <= float(y.min()) and float(y.max()) <= 1


def test_decode_deterministic(toy_bundle):
    z = torch.randn(2, 4, 16, 16, generator=torch.Generator().manual_seed(0))
    assert torch.equal(decode(z, toy_bundle), decode(z, toy_bundle))


def test_config_validation():
    with pytest.raises(ConfigError) as exc:
        ToyBackboneConfig(downsample=3, width=30).validate()
    assert len(exc.value.problems) >= 2
    assert ToyBackboneConfig(downsample=8).latent_size == 8


@pytest.mark.parametrize("f", [2, 8])
def test_other_downsample_factors(f):
    b = build_toy_backbone(ToyBackboneConfig(downsample=f), seed=1, calibrate=False)
    z = encode(np.zeros((64, 64, 3), np.float32), b)
    assert z.shape == (4, 64 // f, 64 // f)
    assert decode(z, b).shape == (3, 64, 64)
    assert predict_latent(z, embed_prompt("x", b), b).shape == z.shape


# --------------------------------------------------------------------------- construction


def test_same_seed_identical_weights():
    a, b = build_toy_backbone(seed=3, calibrate=False), build_toy_backbone(seed=3, calibrate=False)
    assert a.weight_bytes() == b.weight_bytes()
    assert a.content_hash() == b.content_hash()


def test_different_seeds_differ(images):
    a, b = build_toy_backbone(seed=1), build_toy_backbone(seed=2)
    assert not torch.equal(encode(images, a), encode(images, b))


def test_latent_scale_gives_unit_variance(random_bundle):
    imgs = np.stack([s.image for s in synth_generate(bb.CALIBRATION_SIZE, 64, seed=bb.CALIBRATION_SEED)])
    z = encode(imgs, random_bundle).double()
    assert abs(float(z.std(unbiased=False)) - 1.0) < 1e-5


def test_toy_latents_near_unit_variance(toy_bundle):
    imgs = np.stack([s.image for s in synth_generate(64, 64, seed=42)])
    assert 0.8 < float(encode(imgs, toy_bundle).std()) < 1.25


def test_calibrate_rejects_constant_encoder(random_bundle):
    w = {k: torch.zeros_like(v) if k.startswith("enc.") else v for k, v in random_bundle.weights.items()}
    flat = BackboneBundle(random_bundle.config, w)
    with pytest.raises(ValueError):
        calibrate_latent_scale(flat, np.zeros((2, 64, 64, 3), np.float32))


def test_attention_sites(random_bundle):
    sites = random_bundle.attention_sites
    names = [s.name for s in sites]
    assert len(names) == 8 and len(set(names)) == 8
    for block in ("attn1", "attn2"):
        for proj in ("to_q", "to_k", "to_v", "to_out"):
            assert any(n.endswith(f"{block}.{proj}") for n in names)
    cross_k = next(s for s in sites if s.name.endswith("attn2.to_k"))
    assert cross_k.d_in == random_bundle.config.prompt_dim
    for s in sites:
        assert random_bundle.weights[f"{s.name}.weight"].shape == (s.d_out, s.d_in)


# --------------------------------------------------------------------------- pretrained fixture


def test_toy_reconstruction_error(toy_bundle):
    imgs = np.stack([s.image for s in synth_generate(32, 64, seed=2024)])
    with torch.no_grad():
        rec = decode(encode(imgs, toy_bundle), toy_bundle).permute(0, 2, 3, 1).numpy()
    assert np.abs(rec - imgs).mean() < 0.08


def test_toy_mask_roundtrip(toy_bundle):
    # encoded targets must decode back to something Otsu can separate
    from silora.maskops import binarize, mask_to_rgb, otsu_threshold, rgb_to_mask
    from silora.metrics import compute_metrics, confusion

    samples = synth_generate(16, 64, seed=99)
    rgb = np.stack([mask_to_rgb(s.mask.astype(np.float32)) for s in samples])
    with torch.no_grad():
        y = decode(encode(rgb, toy_bundle), toy_bundle).permute(0, 2, 3, 1).numpy()
    ious = []
    for yi, s in zip(y, samples):
        soft = rgb_to_mask(yi)
        ious.append(compute_metrics(confusion(binarize(soft, otsu_threshold(soft)), s.mask)).miou)
    assert np.mean(ious) > 93


def test_load_bundle_toy_alias(toy_bundle):
    assert load_bundle("toy").content_hash() == toy_bundle.content_hash()


def test_golden_prediction_hash(toy_bundle):
    z = torch.from_numpy(np.random.default_rng(7).standard_normal((2, 4, 16, 16)).astype(np.float32))
    with torch.no_grad():
        out = predict_latent(z, embed_prompt("segmentation map", toy_bundle), toy_bundle)
    digest = hashlib.sha256(out.numpy().astype("<f4").tobytes()).hexdigest()
    assert digest == GOLDEN_PREDICT_SHA256


# --------------------------------------------------------------------------- prompts


def test_prompt_embedding(random_bundle):
    p = embed_prompt("segmentation map", random_bundle)
    assert p.shape == (8, 32)
    assert torch.equal(p, embed_prompt("segmentation map", random_bundle))
    assert not torch.equal(p, embed_prompt("depth", random_bundle))
    # independent of the bundle's weights: a function of the string alone
    other = build_toy_backbone(seed=5, calibrate=False)
    assert torch.equal(p, embed_prompt("segmentation map", other))


def test_prompt_embedding_rejects_empty(random_bundle):
    with pytest.raises(ValueError):
        embed_prompt("", random_bundle)


def test_prompt_reaches_output(toy_bundle):
    z = torch.randn(4, 16, 16, generator=torch.Generator().manual_seed(1))
    with torch.no_grad():
        a = predict_latent(z, embed_prompt("segmentation map", toy_bundle), toy_bundle)
        b = predict_latent(z, embed_prompt("depth", toy_bundle), toy_bundle)
    assert not torch.equal(a, b)


# --------------------------------------------------------------------------- U-Net forward


def test_predict_shape_and_batching(random_bundle):
    z = torch.randn(3, 4, 16, 16, generator=torch.Generator().manual_seed(2))
    p = embed_prompt("segmentation map", random_bundle)
    with torch.no_grad():
        out = predict_latent(z, p, random_bundle)
        single = predict_latent(z[1], p, random_bundle)
    assert out.shape == z.shape
    assert torch.allclose(out[1], single, atol=1e-6)


def test_predict_rejects_bad_shapes(random_bundle):
    p = embed_prompt("x", random_bundle)
    with pytest.raises(ShapeError):
        predict_latent(torch.zeros(4, 8, 8), p, random_bundle)
    with pytest.raises(ShapeError):
        predict_latent(torch.zeros(4, 16, 16), torch.zeros(3, 32), random_bundle)


def test_empty_adaptor_set_equals_zero_b(random_bundle):
    z = torch.randn(2, 4, 16, 16, generator=torch.Generator().manual_seed(3))
    p = embed_prompt("segmentation map", random_bundle)
    zero_b = init_adaptor_set(random_bundle, rank=4, seed=9)
    with torch.no_grad():
        a = predict_latent(z, p, random_bundle, AdaptorSet([], 4, 4.0))
        b = predict_latent(z, p, random_bundle, zero_b)
        c = predict_latent(z, p, random_bundle)
    assert torch.equal(a, b) and torch.equal(a, c)


def test_mismatched_adaptor_sites(random_bundle):
    s = init_adaptor_set(random_bundle, rank=2)
    partial = AdaptorSet(list(s)[:-1], 2, 2.0)
    with pytest.raises(ConfigError, match="missing"):
        predict_latent(torch.zeros(4, 16, 16), embed_prompt("x", random_bundle), random_bundle, partial)


class _ReferenceUNet(nn.Module):
    """The toy U-Net rebuilt from stock torch modules, LoRA merged into dense weights."""

    def __init__(self, bundle, adaptors=None):
        super().__init__()
        W, c, w = bundle.weights, bundle.config, bundle.config.width
        deltas = {a.name: a.delta().detach() for a in adaptors} if adaptors else {}

        def conv(name, cin, cout, k, stride=1, pad=0):
            m = nn.Conv2d(cin, cout, k, stride, pad)
            m.weight.data, m.bias.data = W[f"{name}.weight"].clone(), W[f"{name}.bias"].clone()
            return m

        def gn(name):
            m = nn.GroupNorm(8, w, eps=1e-5)
            m.weight.data, m.bias.data = W[f"{name}.weight"].clone(), W[f"{name}.bias"].clone()
            return m

        def ln(name):
            m = nn.LayerNorm(w, eps=1e-5)
            m.weight.data, m.bias.data = W[f"{name}.weight"].clone(), W[f"{name}.bias"].clone()
            return m

        def mha(name, kdim):
            m = nn.MultiheadAttention(w, c.heads, bias=True, kdim=kdim, vdim=kdim, batch_first=True)
            merged = {p: W[f"{name}.{p}.weight"] + deltas.get(f"{name}.{p}", 0) for p in ("to_q", "to_k", "to_v", "to_out")}
            if kdim == w:
                m.in_proj_weight.data = torch.cat([merged["to_q"], merged["to_k"], merged["to_v"]])
            else:
                m.q_proj_weight.data = merged["to_q"].clone()
                m.k_proj_weight.data = merged["to_k"].clone()
                m.v_proj_weight.data = merged["to_v"].clone()
            m.in_proj_bias.data.zero_()
            m.out_proj.weight.data = merged["to_out"].clone()
            m.out_proj.bias.data = W[f"{name}.to_out.bias"].clone()
            return m

        self.conv_in = conv("unet.conv_in", c.latent_channels, w, 3, pad=1)
        self.res = nn.ModuleList()
        for blk in ("unet.res0", "unet.res1"):
            self.res.append(nn.ModuleList([gn(f"{blk}.norm1"), conv(f"{blk}.conv1", w, w, 3, pad=1),
                                           gn(f"{blk}.norm2"), conv(f"{blk}.conv2", w, w, 3, pad=1)]))
        self.down = conv("unet.down", w, w, 4, 2, 1)
        self.merge = conv("unet.merge", 2 * w, w, 1)
        tb = "unet.up"
        self.n1, self.attn1 = ln(f"{tb}.attn1.norm"), mha(f"{tb}.attn1", w)
        self.n2, self.attn2 = ln(f"{tb}.attn2.norm"), mha(f"{tb}.attn2", c.prompt_dim)
        self.n3 = ln(f"{tb}.ff.norm")
        self.fc1 = nn.Linear(w, 4 * w)
        self.fc1.weight.data, self.fc1.bias.data = W[f"{tb}.ff.fc1.weight"].clone(), W[f"{tb}.ff.fc1.bias"].clone()
        self.fc2 = nn.Linear(4 * w, w)
        self.fc2.weight.data, self.fc2.bias.data = W[f"{tb}.ff.fc2.weight"].clone(), W[f"{tb}.ff.fc2.bias"].clone()
        self.norm_out = gn("unet.norm_out")
        self.conv_out = conv("unet.conv_out", w, c.latent_channels, 3, pad=1)

    def _res(self, i, x):
        n1, c1, n2, c2 = self.res[i]
        return x + c2(nn.functional.silu(n2(c1(nn.functional.silu(n1(x))))))

    def forward(self, z, p):
        silu = nn.functional.silu
        h = self._res(0, self.conv_in(z))
        d = self._res(1, silu(self.down(h)))
        h = self.merge(torch.cat([h, nn.functional.interpolate(d, scale_factor=2)], 1))
        n, ch, hh, ww = h.shape
        x = h.flatten(2).transpose(1, 2)
        q = self.n1(x)
        x = x + self.attn1(q, q, q, need_weights=False)[0]
        ctx = p.expand(n, *p.shape)
        x = x + self.attn2(self.n2(x), ctx, ctx, need_weights=False)[0]
        x = x + self.fc2(nn.functional.gelu(self.fc1(self.n3(x))))
        h = x.transpose(1, 2).reshape(n, ch, hh, ww)
        return self.conv_out(silu(self.norm_out(h)))


@pytest.mark.parametrize("with_adaptors", [False, True])
def test_forward_matches_reference_modules(toy_bundle, with_adaptors):
    adaptors = _random_adaptors(toy_bundle, seed=4) if with_adaptors else None
    ref = _ReferenceUNet(toy_bundle, adaptors).eval()
    z = torch.from_numpy(np.random.default_rng(5).standard_normal((3, 4, 16, 16)).astype(np.float32))
    p = embed_prompt("segmentation map", toy_bundle)
    with torch.no_grad():
        want = ref(z, p)
        got = predict_latent(z, p, toy_bundle, adaptors)
    assert torch.allclose(got, want, rtol=1e-5, atol=1e-5)
    if with_adaptors:
        with torch.no_grad():
            assert not torch.allclose(got, predict_latent(z, p, toy_bundle), atol=1e-3)


# --------------------------------------------------------------------------- frozen-ness, serialisation


def test_weights_are_read_only(random_bundle):
    with pytest.raises(TypeError):
        random_bundle.weights["unet.conv_in.weight"] = torch.zeros(1)
    assert not any(w.requires_grad for w in random_bundle.weights.values())


def test_bundle_copies_inputs():
    cfg = ToyBackboneConfig()
    w = dict(build_toy_backbone(seed=0, calibrate=False).weights)
    src = w["unet.conv_in.weight"]
    b = BackboneBundle(cfg, w)
    before = b.weight_bytes()
    with torch.no_grad():
        src.add_(1.0)
    assert b.weight_bytes() == before


def test_astype_float64(random_bundle):
    b64 = random_bundle.astype(torch.float64)
    assert b64.dtype == torch.float64
    z = encode(np.zeros((64, 64, 3), np.float32), b64)
    assert z.dtype == torch.float64


def test_save_load_roundtrip(tmp_path, toy_bundle):
    path = tmp_path / "b.silora-bb"
    save_bundle(toy_bundle, path)
    back = load_bundle(path)
    assert back.content_hash() == toy_bundle.content_hash()
    assert back.latent_scale == toy_bundle.latent_scale
    assert back.config == toy_bundle.config
    for k, v in toy_bundle.weights.items():
        assert torch.equal(v, back.weights[k])


def test_bundle_file_header(toy_bundle):
    buf = io.BytesIO()
    write_bundle(buf, toy_bundle)
    raw = buf.getvalue()
    assert raw.startswith(b"SILORA-BB")
    assert int.from_bytes(raw[9:11], "little") == bb.BUNDLE_VERSION


def test_bad_magic_rejected():
    with pytest.raises(IncompatibleCheckpointError, match="magic"):
        read_bundle(io.BytesIO(b"NOT-A-BUNDLE" + bytes(20)))


def test_geometry_mismatch_rejected(random_bundle):
    w = dict(random_bundle.weights)
    del w["unet.conv_out.bias"]
    buf = io.BytesIO()
    write_bundle(buf, BackboneBundle(random_bundle.config, w))
    buf.seek(0)
    with pytest.raises(IncompatibleCheckpointError, match="geometry"):
        read_bundle(buf)


# --------------------------------------------------------------------------- concurrency


def test_shared_bundle_across_threads(toy_bundle):
    z = torch.randn(4, 16, 16, generator=torch.Generator().manual_seed(6))
    prompts = ["segmentation map", "depth", "normals", "segmentation map"] * 2

    def run(t):
        with torch.no_grad():
            return predict_latent(z, embed_prompt(t, toy_bundle), toy_bundle)

    with ThreadPoolExecutor(4) as pool:
        outs = list(pool.map(run, prompts))
    for t, o in zip(prompts, outs):
        assert torch.equal(o, run(t))
