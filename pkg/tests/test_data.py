import csv

import numpy as np
import pytest
from PIL import Image

from silora.data import (
    ImageSample,
    load_dataset,
    load_mask,
    split_dataset,
    synth_generate,
    write_dataset,
)
from silora.errors import DataError


def _write_fixture(root, n=3, size=20):
    rng = np.random.default_rng(0)
    (root / "images").mkdir()
    (root / "masks").mkdir()
    rows = []
    for i in range(n):
        rid = f"img{i}"
        Image.fromarray(rng.integers(0, 256, (size, size, 3), dtype=np.uint8)).save(root / "images" / f"{rid}.png")
        m = np.zeros((size, size), np.uint8)
        m[: size // 2] = 255
        Image.fromarray(m, mode="L").save(root / "masks" / f"{rid}.png")
        rows.append([rid, f"farm{i % 2}", "test" if i == n - 1 else "train"])
    with open(root / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "group", "split"])
        w.writerows(rows)
    return rows


def test_load_wellformed(tmp_path):
    _write_fixture(tmp_path)
    samples = load_dataset(tmp_path)
    assert len(samples) == 3
    for s in samples:
        assert s.image.shape == (20, 20, 3) and s.mask.shape == (20, 20)
        assert s.image.dtype == np.float32 and 0 <= s.image.min() and s.image.max() <= 1
        assert set(np.unique(s.mask)) <= {0, 1}
    assert [s.id for s in samples] == ["img0", "img1", "img2"]
    assert [s.group for s in samples] == ["farm0", "farm1", "farm0"]


def test_split_filter_and_resize(tmp_path):
    _write_fixture(tmp_path)
    train = load_dataset(tmp_path, "train", image_size=32)
    assert [s.id for s in train] == ["img0", "img1"]
    assert train[0].image.shape == (32, 32, 3)
    assert train[0].mask.shape == (32, 32)


def test_loader_idempotent(tmp_path):
    _write_fixture(tmp_path)
    a, b = load_dataset(tmp_path), load_dataset(tmp_path)
    for x, y in zip(a, b):
        assert np.array_equal(x.image, y.image) and np.array_equal(x.mask, y.mask)


def test_missing_mask_names_record(tmp_path):
    _write_fixture(tmp_path)
    (tmp_path / "masks" / "img1.png").unlink()
    with pytest.raises(DataError, match="img1"):
        load_dataset(tmp_path)


def test_gray_mask_rejected_unless_tolerated(tmp_path):
    _write_fixture(tmp_path)
    m = np.full((20, 20), 200, np.uint8)
    m[:5] = 0
    Image.fromarray(m, mode="L").save(tmp_path / "masks" / "img2.png")
    with pytest.raises(DataError, match="img2"):
        load_dataset(tmp_path)
    s = load_dataset(tmp_path, tolerate_gray=True)[2]
    assert s.mask[:5].sum() == 0 and s.mask[5:].all()


def test_duplicate_ids(tmp_path):
    _write_fixture(tmp_path)
    with open(tmp_path / "manifest.csv", "a", newline="") as fh:
        csv.writer(fh).writerow(["img0", "farm0", "train"])
    with pytest.raises(DataError, match="duplicate"):
        load_dataset(tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(DataError, match="manifest"):
        load_dataset(tmp_path)


def test_nearest_resize_keeps_binary(tmp_path):
    rng = np.random.default_rng(3)
    m = (rng.random((40, 100)) > 0.5).astype(np.uint8) * 255  # 100 wide, 40 tall
    Image.fromarray(m, mode="L").save(tmp_path / "m.png")
    out = load_mask(tmp_path / "m.png", size=64)
    assert out.shape == (64, 64)
    assert set(np.unique(out)) <= {0, 1}


def test_write_then_load_roundtrip(tmp_path):
    samples = synth_generate(4, 32, seed=5)
    write_dataset(tmp_path, {"train": samples[:3], "test": samples[3:]})
    back = load_dataset(tmp_path)
    assert [s.id for s in back] == [s.id for s in samples]
    for s, b in zip(samples, back):
        assert np.array_equal(s.mask, b.mask)
        assert np.abs(s.image - b.image).max() <= 0.5 / 255 + 1e-6
    assert len(load_dataset(tmp_path, "test")) == 1


def test_sample_invariants():
    with pytest.raises(DataError):
        ImageSample(np.zeros((4, 4, 3), np.float32), np.zeros((5, 4), np.uint8), "x", "g")
    with pytest.raises(DataError):
        ImageSample(np.zeros((4, 4, 3), np.float32), np.zeros((4, 4), np.uint8), "x", "")


# --------------------------------------------------------------------------- synthetic


def test_synth_deterministic():
    a, b = synth_generate(6, 32, seed=11), synth_generate(6, 32, seed=11)
    for x, y in zip(a, b):
        assert x.image.tobytes() == y.image.tobytes()
        assert x.mask.tobytes() == y.mask.tobytes()
    c = synth_generate(6, 32, seed=12)
    assert not np.array_equal(a[0].image, c[0].image)


def test_synth_foreground_fraction():
    for s in synth_generate(60, 64, seed=0):
        assert 0.02 < s.mask.mean() < 0.6


def test_synth_groups_round_robin():
    groups = [s.group for s in synth_generate(10, 32, seed=0)]
    counts = {g: groups.count(g) for g in set(groups)}
    assert len(counts) == 5 and set(counts.values()) == {2}


def test_synth_blades_are_bright():
    # blades are near-white; the sky palette is darker on average
    for s in synth_generate(10, 64, seed=1):
        lum = s.image.mean(-1)
        assert lum[s.mask == 1].mean() > lum[s.mask == 0].mean()


def test_synth_rejects_zero():
    with pytest.raises(ValueError):
        synth_generate(0)


# --------------------------------------------------------------------------- splitting


def test_split_sizes_and_partition():
    samples = synth_generate(10, 16, seed=0)
    tr, te = split_dataset(samples, (0.8, 0.2), seed=4)
    assert (len(tr), len(te)) == (8, 2)
    ids = [s.id for s in tr + te]
    assert sorted(ids) == sorted(s.id for s in samples)
    assert len(set(ids)) == 10
    tr2, te2 = split_dataset(samples, (0.8, 0.2), seed=4)
    assert [s.id for s in tr2] == [s.id for s in tr]
    assert all(s.group.startswith("windfarm_") for s in tr)


def test_split_rejects_empty():
    samples = synth_generate(3, 16, seed=0)
    with pytest.raises(ValueError):
        split_dataset(samples, (1.0, 0.0))
    with pytest.raises(ValueError):
        split_dataset(samples, (0.5, 0.4))
