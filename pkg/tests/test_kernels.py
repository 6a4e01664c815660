import os
import subprocess
import sys

import numpy as np
import pytest

from latentanon import _accel, kernels

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


def _mix_case(rng, n_groups=40, n_coords=100, n_loc=60):
    # groups of 1-3 distinct coordinates, -1 padded
    coord_idx = np.full((n_groups, 3), -1, dtype=np.int64)
    perm = rng.permutation(n_coords)
    k = 0
    for p in range(n_groups):
        take = min(int(rng.integers(1, 4)), n_coords - k)
        coord_idx[p, :take] = perm[k : k + take]
        k += take
    mats = rng.standard_normal((n_groups, 3, 3))
    pix = rng.choice(n_loc, size=n_groups, replace=False).astype(np.int64)
    return coord_idx, mats, pix, n_loc, n_coords


@needs_numba
def test_pixel_mix_agree(rng):
    coord_idx, mats, pix, n_loc, n_coords = _mix_case(rng)
    x = rng.standard_normal((5, n_coords))
    np_fn, jit_fn = kernels.KERNELS["pixel_mix_forward"]
    a = np_fn(x, coord_idx, mats, pix, n_loc)
    b = jit_fn(x, coord_idx, mats, pix, n_loc)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    img = rng.standard_normal((5, n_loc, 3))
    np_fn, jit_fn = kernels.KERNELS["pixel_mix_inverse"]
    assert np.allclose(np_fn(img, coord_idx, mats, pix, n_coords), jit_fn(img, coord_idx, mats, pix, n_coords),
                       rtol=1e-12, atol=1e-12)


@needs_numba
@pytest.mark.parametrize("n", [1, 7, 300])
def test_pair_counts_agree(rng, n):
    g = np.round(rng.random(n), 2)
    i = np.round(rng.random(n + 3), 2)
    np_fn, jit_fn = kernels.KERNELS["pair_counts"]
    assert tuple(np_fn(g, i)) == tuple(int(v) for v in jit_fn(g, i))
    less = sum(a < b for a in g for b in i)
    ties = sum(a == b for a in g for b in i)
    assert kernels.pair_counts(g, i) == (less, ties)


@needs_numba
def test_identity_kernels_agree(rng):
    P = rng.standard_normal((6, 4))
    G = rng.standard_normal((20, 4))
    labels = rng.integers(0, 5, size=20).astype(np.int64)
    labels[:5] = np.arange(5)
    np_fn, jit_fn = kernels.KERNELS["min_distance_per_identity"]
    a, b = np_fn(P, G, labels, 5), jit_fn(P, G, labels, 5)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    brute = np.array([[min(np.linalg.norm(p - G[j]) for j in range(20) if labels[j] == k) for k in range(5)] for p in P])
    assert np.allclose(a, brute, rtol=1e-12)
    dist = np.round(rng.random((30, 8)), 1)
    true = rng.integers(0, 8, size=30).astype(np.int64)
    np_fn, jit_fn = kernels.KERNELS["tie_ranks"]
    assert np.array_equal(np_fn(dist, true), jit_fn(dist, true))


def test_env_flag_disables_numba():
    code = "from latentanon import _accel; print(_accel.USE_NUMBA)"
    env = dict(os.environ, LATENTANON_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"


def test_dispatch_follows_flag(monkeypatch, rng):
    g, i = rng.random(50), rng.random(60)
    monkeypatch.setattr(_accel, "USE_NUMBA", False)
    a = kernels.pair_counts(g, i)
    monkeypatch.setattr(_accel, "USE_NUMBA", _accel.HAVE_NUMBA)
    assert kernels.pair_counts(g, i) == a
