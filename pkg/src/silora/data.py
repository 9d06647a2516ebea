"""Image/mask datasets: on-disk loader, synthetic blade generator, splitting.

On-disk layout::

    <root>/manifest.csv        header ``id,group,split``
    <root>/images/<id>.png     RGB
    <root>/masks/<id>.png      single channel, 0 = background, 255 = blade
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

log = logging.getLogger(__name__)

__all__ = [
    "ImageSample",
    "synth_generate",
    "split_dataset",
    "load_dataset",
    "write_dataset",
    "load_image",
    "load_mask",
    "save_mask",
    "N_SYNTH_GROUPS",
]

N_SYNTH_GROUPS = 5
MANIFEST = "manifest.csv"

# (sky top, sky bottom, blade tint) per synthetic windfarm
_PALETTES = [
    ((0.25, 0.45, 0.80), (0.60, 0.75, 0.95), (0.92, 0.92, 0.90)),
    ((0.45, 0.50, 0.55), (0.65, 0.68, 0.70), (0.95, 0.95, 0.97)),
    ((0.15, 0.30, 0.60), (0.35, 0.55, 0.85), (0.85, 0.86, 0.88)),
    ((0.55, 0.45, 0.55), (0.85, 0.65, 0.50), (0.97, 0.95, 0.93)),
    ((0.20, 0.35, 0.30), (0.40, 0.55, 0.45), (0.88, 0.90, 0.90)),
]


@dataclass
class ImageSample:
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    id: str
    group: str

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise DataError(f"{self.id}: image {self.image.shape} and mask {self.mask.shape} differ in size")
        if not self.group:
            raise DataError(f"{self.id}: empty group")


# --------------------------------------------------------------------------- synthetic data


def _quad_mask(size, pts):
    """Pixels whose centres lie inside the convex quadrilateral ``pts`` (counter-clockwise or not)."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    inside_pos = np.ones((size, size), dtype=bool)
    inside_neg = np.ones((size, size), dtype=bool)
    for k in range(4):
        (x0, y0), (x1, y1) = pts[k], pts[(k + 1) % 4]
        cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
        inside_pos &= cross >= 0
        inside_neg &= cross <= 0
    return inside_pos | inside_neg


def _blade_quads(rng, size):
    hub = rng.uniform(0.25 * size, 0.75 * size, size=2)
    n_blades = int(rng.integers(1, 4))
    start = rng.uniform(0, 2 * np.pi)
    quads = []
    for b in range(n_blades):
        theta = start + b * 2 * np.pi / 3 + rng.normal(0, 0.05)
        length = rng.uniform(0.4, 0.8) * size
        w_root = rng.uniform(0.14, 0.22) * size
        w_tip = rng.uniform(0.07, 0.1) * size
        d = np.array([np.cos(theta), np.sin(theta)])
        n = np.array([-d[1], d[0]])
        tip = hub + length * d
        quads.append([hub + n * w_root / 2, tip + n * w_tip / 2, tip - n * w_tip / 2, hub - n * w_root / 2])
    return quads


def _render(rng, size, group):
    top, bottom, tint = (np.array(c) for c in _PALETTES[group % len(_PALETTES)])
    t = np.linspace(0, 1, size)[:, None, None]
    sky = (1 - t) * top + t * bottom
    sky = sky * rng.uniform(0.85, 1.1) + rng.normal(0, 0.04, size=3)
    yy, xx = np.mgrid[0:size, 0:size] / size
    texture = np.zeros((size, size))
    for _ in range(3):
        fx, fy = rng.uniform(1, 4, size=2)
        texture += np.sin(2 * np.pi * (fx * xx + fy * yy) + rng.uniform(0, 2 * np.pi))
    sky = sky + 0.025 * texture[..., None]

    for _ in range(100):
        quads = _blade_quads(rng, size)
        mask = np.zeros((size, size), dtype=bool)
        for q in quads:
            mask |= _quad_mask(size, q)
        frac = mask.mean()
        if 0.02 < frac < 0.6:
            break
    else:  # pragma: no cover - geometry makes this practically unreachable
        raise RuntimeError("could not draw a blade layout with a valid foreground fraction")

    # blades: tinted white with a brightness ramp across the image
    ramp = 1 - 0.15 * (0.5 * xx + 0.5 * yy)
    blade = tint * rng.uniform(0.9, 1.0) * ramp[..., None]
    img = np.where(mask[..., None], blade, sky)
    img = img + rng.normal(0, 0.02, size=img.shape)
    return np.clip(img, 0, 1).astype(np.float32), mask.astype(np.uint8)


def synth_generate(n, size=64, seed=0):
    """``n`` synthetic blade images with exact masks.

    Sample ``i`` belongs to group ``windfarm_{i % 5}``; each group has its own
    sky palette.  Output depends only on ``(n, size, seed)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    samples = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        g = i % N_SYNTH_GROUPS
        img, mask = _render(rng, size, g)
        samples.append(ImageSample(img, mask, id=f"synth_{seed}_{i:05d}", group=f"windfarm_{g}"))
    return samples


def split_dataset(samples, fractions=(0.8, 0.2), seed=0):
    """Seeded shuffle then partition into ``(train, test)``."""
    if len(fractions) != 2 or abs(sum(fractions) - 1) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"fractions must be two non-negative numbers summing to 1, got {fractions}")
    n = len(samples)
    n_train = int(round(n * fractions[0]))
    if n_train == 0 or n_train == n:
        raise ValueError(f"fractions {fractions} leave an empty split for {n} samples")
    order = np.random.default_rng(seed).permutation(n)
    return [samples[i] for i in order[:n_train]], [samples[i] for i in order[n_train:]]


# --------------------------------------------------------------------------- disk I/O


def load_image(path, size=None):
    """RGB file -> float32 ``(H, W, 3)`` in [0, 1], bilinear-resized to ``size``."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.width == 0 or im.height == 0:
            raise DataError(f"{path}: empty image")
        if size is not None and im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
        return np.asarray(im, dtype=np.float32) / 255.0


def load_mask(path, size=None, tolerate_gray=False):
    """Single-channel mask file -> uint8 ``(H, W)`` in {0, 1}.

    Only 0 and 255 are accepted unless ``tolerate_gray``, which maps
    values >= 128 to 1.  Resizing is nearest-neighbour so the result stays
    binary.
    """
    with Image.open(path) as im:
        if im.width == 0 or im.height == 0:
            raise DataError(f"{path}: empty mask")
        arr = np.asarray(im.convert("L"))
    values = np.unique(arr)
    if not tolerate_gray and not set(values.tolist()) <= {0, 255}:
        bad = [v for v in values.tolist() if v not in (0, 255)][:5]
        raise DataError(f"{path}: mask is not binary (found values {bad}); use tolerate_gray to threshold")
    mask = (arr >= 128).astype(np.uint8)
    if size is not None and mask.shape != (size, size):
        mask = np.asarray(Image.fromarray(mask).resize((size, size), Image.NEAREST))
    return mask


def save_mask(mask, path):
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255, mode="L").save(path)


def _read_manifest(root):
    path = Path(root) / MANIFEST
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"id", "group", "split"} - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{path}: manifest is missing columns {sorted(missing)}")
        return list(reader)


def load_dataset(root, split=None, image_size=None, tolerate_gray=False):
    """Samples listed in ``<root>/manifest.csv`` for ``split`` (all when ``None``).

    Images are bilinear-resized and masks nearest-resized to
    ``image_size`` x ``image_size`` when given.  Errors name the record.
    """
    root = Path(root)
    records = _read_manifest(root)
    ids = [r["id"] for r in records]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise DataError(f"duplicate ids in manifest: {dupes[:5]}")
    samples = []
    for r in records:
        if split is not None and r["split"] != split:
            continue
        rid = r["id"]
        img_path = root / "images" / f"{rid}.png"
        mask_path = root / "masks" / f"{rid}.png"
        for p, kind in ((img_path, "image"), (mask_path, "mask")):
            if not p.exists():
                raise DataError(f"record {rid!r}: missing {kind} file {p}")
        if not r["group"]:
            raise DataError(f"record {rid!r}: empty group")
        try:
            image = load_image(img_path, image_size)
            mask = load_mask(mask_path, image_size, tolerate_gray)
        except DataError as exc:
            raise DataError(f"record {rid!r}: {exc}") from exc
        except OSError as exc:
            raise DataError(f"record {rid!r}: cannot decode ({exc})") from exc
        if image.shape[:2] != mask.shape:
            raise DataError(f"record {rid!r}: image {image.shape[:2]} and mask {mask.shape} sizes differ")
        samples.append(ImageSample(image, mask, rid, r["group"]))
    return samples


def write_dataset(root, splits):
    """Write ``{split_name: [ImageSample, ...]}`` in the manifest layout."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    with open(root / MANIFEST, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "group", "split"])
        for split, samples in splits.items():
            for s in samples:
                Image.fromarray(np.round(s.image * 255).astype(np.uint8), mode="RGB").save(root / "images" / f"{s.id}.png")
                save_mask(s.mask, root / "masks" / f"{s.id}.png")
                w.writerow([s.id, s.group, split])
    return root
