import numpy as np
import pytest

from latentanon.backends import LABELS, SyntheticWorld, WorldConfig, face_layout, load_backend
from latentanon.errors import ConfigError, ShapeError
from latentanon.latent import swap_layers


def test_generate_linear(world, rng):
    assert np.all(world.generate(np.zeros(world.shape.latent_shape)) == 0)
    L = rng.standard_normal(world.shape.latent_shape)
    assert np.allclose(world.generate(2 * L), 2 * world.generate(L), rtol=0, atol=1e-12)


def test_roundtrip_pseudo_inverse(world, rng):
    for _ in range(5):
        L = rng.standard_normal(world.shape.latent_shape)
        assert np.max(np.abs(world.encode(world.generate(L)) - L)) <= 1e-6
    assert np.all(world.encode(np.zeros(world.shape.image_shape)) == 0)


def test_dense_generator_full_rank(small_world):
    G = small_world.generator_matrix()
    assert np.linalg.matrix_rank(G) == G.shape[1]
    rng = np.random.default_rng(0)
    L = rng.standard_normal(small_world.shape.latent_shape)
    assert np.allclose(G @ L.ravel(), small_world.generate(L).ravel(), atol=1e-12)
    pinv = np.linalg.pinv(G)
    img = rng.standard_normal(small_world.shape.image_shape)
    assert np.allclose(pinv @ img.ravel(), small_world.encode(img).ravel(), atol=1e-9)


def test_encode_deterministic(world, rng):
    img = rng.standard_normal(world.shape.image_shape)
    assert np.array_equal(world.encode(img), world.encode(img))


def test_identity_embedding_reads_planted_coords(world, rng):
    L = rng.standard_normal(world.shape.latent_shape)
    L2 = rng.standard_normal(world.shape.latent_shape)
    L2[world.identity_mask] = L[world.identity_mask]
    e1 = world.embed_identity(world.generate(L))
    e2 = world.embed_identity(world.generate(L2))
    assert np.allclose(e1, e2, atol=1e-12)
    assert abs(np.linalg.norm(e1) - 1) < 1e-6


def test_swap_all_identity_layers_moves_embedding(world, rng):
    S, T = rng.standard_normal((2, *world.shape.latent_shape))
    out = swap_layers(S, T, world.planted_identity_layers())
    assert np.allclose(world.embed_identity(world.generate(out)), world.embed_identity(world.generate(T)), atol=1e-12)
    # brute force over coordinates: the embedding is exactly the normalized planted coordinates
    x = T.ravel()[world.identity_index]
    assert np.allclose(world.embed_identity(world.generate(T)), x / np.linalg.norm(x), atol=1e-12)


def test_zero_latent_embedding(world):
    assert np.all(world.embed_identity(np.zeros(world.shape.image_shape)) == 0)


def test_attributes_contract(world, rng):
    L = rng.standard_normal(world.shape.latent_shape)
    a = world.predict_attributes(world.generate(L))
    assert a.shape == (8,) and np.all((a > 0) & (a < 1))
    L2 = rng.standard_normal(world.shape.latent_shape)
    for j in range(8):
        m = world.attribute_coordinate_mask(j)
        L2[m] = L[m]
    assert np.allclose(world.predict_attributes(world.generate(L2)), a, atol=1e-12)


def test_attribute_monotone(world, rng):
    L = rng.standard_normal(world.shape.latent_shape)
    for j in range(world.shape.n_attributes):
        idx = world.attribute_index[j]
        w = world.attribute_weights[j]
        c = idx[np.argmax(np.abs(w))]
        step = np.zeros(world.shape.n_layers * world.shape.n_channels)
        step[c] = 0.5 * np.sign(w[np.argmax(np.abs(w))])
        a0 = world.predict_attributes(world.generate(L))[j]
        a1 = world.predict_attributes(world.generate(L + step.reshape(L.shape)))[j]
        assert a1 > a0


def test_ground_truth_recoverability(world, rng):
    L = rng.standard_normal(world.shape.latent_shape)
    e0, a0 = world.score_latents(L)
    L_non = L + np.where(world.identity_mask, 0.0, rng.standard_normal(L.shape))
    assert np.allclose(world.score_latents(L_non)[0], e0, atol=1e-12)
    L_id = L + np.where(world.identity_mask, rng.standard_normal(L.shape), 0.0)
    assert np.allclose(world.score_latents(L_id)[1], a0, atol=1e-12)


def test_parser(world, rng):
    img = rng.standard_normal(world.shape.image_shape)
    seg = world.parse_mask(img)
    assert np.array_equal(seg, face_layout(96))
    assert np.array_equal(seg, world.parse_mask(img))
    assert set(np.unique(seg)) <= set(range(len(LABELS)))
    assert set(np.unique(seg)) == set(range(len(LABELS)))


def test_sample_random_latent(world):
    a = world.sample_random_latent(1)
    assert np.array_equal(a, world.sample_random_latent(1))
    assert np.any(a != world.sample_random_latent(2))


def test_mapper_mean(small_world):
    n = 10_000
    samples = np.stack([small_world.sample_random_latent(s) for s in range(n)])
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(n)
    z = np.abs(mean - small_world.mapper_mean) / se
    # 432 coordinates: a 3-SE band holds for ~99.7% of them, none should exceed 5 SE
    assert np.mean(z <= 3) >= 0.99
    assert z.max() < 5


def test_shape_errors(world):
    with pytest.raises(ShapeError):
        world.generate(np.zeros((18, 500)))
    with pytest.raises(ShapeError):
        world.encode(np.zeros((95, 96, 3)))
    with pytest.raises(ShapeError):
        world.embed_identity(np.zeros(3))


def test_batched_calls(world, rng):
    Ls = rng.standard_normal((3, *world.shape.latent_shape))
    imgs = world.generate(Ls)
    assert imgs.shape == (3, 96, 96, 3)
    assert np.allclose(world.encode(imgs)[1], world.encode(imgs[1]), atol=1e-12)


def test_noise_deterministic():
    w = SyntheticWorld(noise_scale=0.05)
    L = w.sample_random_latent(0)
    assert np.array_equal(w.generate(L), w.generate(L))
    assert np.max(np.abs(w.encode(w.generate(L)) - L)) > 1e-6


def test_identity_gradient_fd(small_world, rng):
    L = rng.standard_normal(small_world.shape.latent_shape)
    ref = small_world.embed_identity(small_world.generate(rng.standard_normal(L.shape)))
    cos, g = small_world.identity_similarity_grad(L, ref)
    v = rng.standard_normal(L.shape)
    eps = 1e-6
    fp, _ = small_world.identity_similarity_grad(L + eps * v, ref)
    fm, _ = small_world.identity_similarity_grad(L - eps * v, ref)
    assert abs((fp - fm) / (2 * eps) - np.sum(g * v)) <= 1e-6 * max(1.0, abs(np.sum(g * v)))
    e = small_world.embed_identity(small_world.generate(L))
    assert abs(cos - e @ ref / (np.linalg.norm(e) * np.linalg.norm(ref))) < 1e-12


def test_world_config_file(tmp_path):
    cfg = WorldConfig(seed=3, identity_blocks=((8, 128, 32),), noise_scale=0.0)
    p = tmp_path / "world.cfg"
    p.write_text(cfg.to_text())
    w = load_backend(f"synthetic:{p}")
    assert w.config == WorldConfig.from_file(p)
    assert w.backend_id == SyntheticWorld(cfg).backend_id
    p.write_text("bogus = 1\n")
    with pytest.raises(ConfigError):
        WorldConfig.from_file(p)


def test_overlapping_plant_rejected():
    with pytest.raises(ConfigError):
        SyntheticWorld(identity_blocks=((5, 250, 20),))


def test_load_backend_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_backend("nonsense")
    with pytest.raises(ConfigError):
        load_backend(f"onnx:{tmp_path / 'missing'}")
