import logging

import numpy as np
import pytest

from latentanon import storage
from latentanon.errors import DataError


@pytest.fixture
def image_dir(tmp_path, small_world):
    d = tmp_path / "imgs"
    for k in range(3):
        storage.write_image(d / f"img{k}.npy", small_world.generate(small_world.sample_random_latent(k)))
    return d


def test_ingest_orders_and_labels(image_dir):
    (image_dir / "labels.csv").write_text("image_id,identity,attr_0\nimg1,b,0.5\nimg0,a,0.1\nimg2,a,0.9\n")
    m = storage.ingest(image_dir, image_dir / "labels.csv")
    assert m.ids == ["img0", "img1", "img2"]
    assert m.identities == ["a", "b", "a"]
    assert m.entries[1].attributes == (0.5,)
    assert storage.DatasetManifest.from_json(m.to_json()) == m


def test_ingest_empty_warns(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        m = storage.ingest(tmp_path)
    assert len(m) == 0 and "no images" in caplog.text


def test_ingest_errors(image_dir, tmp_path):
    (image_dir / "img0.png").write_bytes(b"")
    with pytest.raises(DataError, match="duplicate"):
        storage.ingest(image_dir)
    with pytest.raises(DataError):
        storage.ingest(tmp_path / "missing")
    d = tmp_path / "x"
    d.mkdir()
    (d / "labels.csv").write_text("image_id\nghost\n")
    with pytest.raises(DataError, match="missing"):
        storage.ingest(d, d / "labels.csv")


def test_cache(image_dir, tmp_path, small_world):
    m = storage.ingest(image_dir)
    cache = tmp_path / "cache"
    r = storage.cache_latents(m, small_world, cache)
    assert r.encoded == ["img0", "img1", "img2"] and not r.skipped
    r = storage.cache_latents(m, small_world, cache)
    assert r.encoded == [] and r.skipped == ["img0", "img1", "img2"]
    (cache / "img1.bin").write_bytes(b"garbage")
    r = storage.cache_latents(m, small_world, cache)
    assert r.encoded == ["img1"]
    img = storage.read_image(m.entries[1].path)[0]
    assert np.array_equal(storage.cached_latent(cache, "img1"), small_world.encode(img).astype(np.float32))


def test_cache_reencodes_on_image_change(image_dir, tmp_path, small_world):
    m = storage.ingest(image_dir)
    storage.cache_latents(m, small_world, tmp_path / "c")
    storage.write_image(image_dir / "img0.npy", small_world.generate(small_world.sample_random_latent(99)))
    assert storage.cache_latents(m, small_world, tmp_path / "c").encoded == ["img0"]


def test_npy_exact_and_png_roundtrip(tmp_path, rng):
    img = rng.random((16, 16, 3))
    p = storage.write_image(tmp_path / "a.npy", img)
    assert np.array_equal(storage.read_image(p)[0], img)
    q = storage.write_image(tmp_path / "b.png", img, 8)
    back, info = storage.read_image(q)
    assert info["bit_depth"] == 8
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12
    r = storage.write_image(tmp_path / "c.png", back, 8)
    assert r.read_bytes() == q.read_bytes()
    s = storage.write_image(tmp_path / "d.png", img, 16)
    assert np.abs(storage.read_image(s)[0] - img).max() <= 0.5 / 65535 + 1e-12


def test_unreadable_image(tmp_path):
    (tmp_path / "bad.png").write_bytes(b"not an image")
    with pytest.raises(DataError):
        storage.read_image(tmp_path / "bad.png")


def test_segmentation_roundtrip(tmp_path, small_world):
    seg = small_world.parse_mask(small_world.generate(small_world.sample_random_latent(0)))
    p = storage.write_segmentation(tmp_path / "s.png", seg)
    assert np.array_equal(storage.read_segmentation(p), seg)
