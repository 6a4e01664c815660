"""Hot numeric kernels.

Every kernel has a numba-compiled variant (``*_jit``) and a pure numpy
variant (``*_np``). The undecorated name dispatches on
:data:`latentanon._accel.USE_NUMBA`, which follows the
``LATENTANON_DISABLE_NUMBA`` environment variable. Both variants must agree
to floating-point round-off; ``tests/test_kernels.py`` checks that.
"""
from __future__ import annotations

import numpy as np

from latentanon import _accel
from latentanon._accel import njit

# ---------------------------------------------------------------------------
# grouped 3x3 pixel mixing (synthetic generator / encoder)
# ---------------------------------------------------------------------------


@njit(nogil=True)
def _pixel_mix_forward_jit(x, coord_idx, mats, pix_idx, n_loc):
    n_batch = x.shape[0]
    n_groups = coord_idx.shape[0]
    out = np.zeros((n_batch, n_loc, 3))
    for b in range(n_batch):
        for p in range(n_groups):
            loc = pix_idx[p]
            for i in range(3):
                acc = 0.0
                for j in range(3):
                    c = coord_idx[p, j]
                    if c >= 0:
                        acc += mats[p, i, j] * x[b, c]
                out[b, loc, i] = acc
    return out


def _pixel_mix_forward_np(x, coord_idx, mats, pix_idx, n_loc):
    valid = coord_idx >= 0
    gathered = np.where(valid[None], x[:, np.where(valid, coord_idx, 0)], 0.0)
    vals = np.einsum("pij,bpj->bpi", mats, gathered)
    out = np.zeros((x.shape[0], n_loc, 3))
    out[:, pix_idx, :] = vals
    return out


@njit(nogil=True)
def _pixel_mix_inverse_jit(img, coord_idx, inv, pix_idx, n_coords):
    n_batch = img.shape[0]
    n_groups = coord_idx.shape[0]
    out = np.zeros((n_batch, n_coords))
    for b in range(n_batch):
        for p in range(n_groups):
            loc = pix_idx[p]
            for j in range(3):
                c = coord_idx[p, j]
                if c < 0:
                    continue
                acc = 0.0
                for i in range(3):
                    acc += inv[p, j, i] * img[b, loc, i]
                out[b, c] = acc
    return out


def _pixel_mix_inverse_np(img, coord_idx, inv, pix_idx, n_coords):
    vals = np.einsum("pji,bpi->bpj", inv, img[:, pix_idx, :])
    out = np.zeros((img.shape[0], n_coords))
    valid = coord_idx >= 0
    out[:, coord_idx[valid]] = vals[:, valid]
    return out


def pixel_mix_forward(x, coord_idx, mats, pix_idx, n_loc):
    """Map a batch of flat latents ``(B, D)`` to pixel triples ``(B, n_loc, 3)``.

    Group ``p`` writes ``mats[p] @ x[coord_idx[p]]`` to pixel location
    ``pix_idx[p]``; ``coord_idx`` entries of ``-1`` are padding.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if _accel.USE_NUMBA:
        return _pixel_mix_forward_jit(x, coord_idx, mats, pix_idx, n_loc)
    return _pixel_mix_forward_np(x, coord_idx, mats, pix_idx, n_loc)


def pixel_mix_inverse(img, coord_idx, inv, pix_idx, n_coords):
    """Least-squares inverse of :func:`pixel_mix_forward` (``inv`` holds per-group pseudo-inverses)."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    if _accel.USE_NUMBA:
        return _pixel_mix_inverse_jit(img, coord_idx, inv, pix_idx, n_coords)
    return _pixel_mix_inverse_np(img, coord_idx, inv, pix_idx, n_coords)


# ---------------------------------------------------------------------------
# genuine/impostor pair counting (AUC)
# ---------------------------------------------------------------------------


@njit(nogil=True)
def _pair_counts_jit(genuine, impostor):
    g = np.sort(genuine)
    imp = np.sort(impostor)
    n_imp = imp.shape[0]
    less = 0
    ties = 0
    lo = 0  # first impostor >= g[k]
    hi = 0  # first impostor > g[k]
    for k in range(g.shape[0]):
        v = g[k]
        while lo < n_imp and imp[lo] < v:
            lo += 1
        if hi < lo:
            hi = lo
        while hi < n_imp and imp[hi] <= v:
            hi += 1
        less += n_imp - hi
        ties += hi - lo
    return less, ties


def _pair_counts_np(genuine, impostor):
    imp = np.sort(impostor)
    n_imp = imp.shape[0]
    left = np.searchsorted(imp, genuine, side="left")
    right = np.searchsorted(imp, genuine, side="right")
    return int(np.sum(n_imp - right)), int(np.sum(right - left))


def pair_counts(genuine, impostor) -> tuple[int, int]:
    """Count (genuine, impostor) pairs with genuine < impostor, and ties.

    Runs in O((n + m) log(n + m)); the quadratic oracle lives in the tests.
    """
    genuine = np.ascontiguousarray(genuine, dtype=np.float64)
    impostor = np.ascontiguousarray(impostor, dtype=np.float64)
    if _accel.USE_NUMBA:
        less, ties = _pair_counts_jit(genuine, impostor)
        return int(less), int(ties)
    return _pair_counts_np(genuine, impostor)


# ---------------------------------------------------------------------------
# gallery identification
# ---------------------------------------------------------------------------


@njit(nogil=True)
def _min_dist_per_identity_jit(probes, gallery, labels, n_ids):
    n_q = probes.shape[0]
    n_g = gallery.shape[0]
    dim = probes.shape[1]
    out = np.full((n_q, n_ids), np.inf)
    for q in range(n_q):
        for k in range(n_g):
            acc = 0.0
            for d in range(dim):
                diff = probes[q, d] - gallery[k, d]
                acc += diff * diff
            dist = np.sqrt(acc)
            lab = labels[k]
            if dist < out[q, lab]:
                out[q, lab] = dist
    return out


def _min_dist_per_identity_np(probes, gallery, labels, n_ids):
    sq = (
        np.sum(probes**2, axis=1)[:, None]
        - 2.0 * probes @ gallery.T
        + np.sum(gallery**2, axis=1)[None, :]
    )
    dist = np.sqrt(np.maximum(sq, 0.0))
    out = np.full((n_ids, probes.shape[0]), np.inf)
    np.minimum.at(out, labels, dist.T)
    return out.T


def min_distance_per_identity(probes, gallery, labels, n_ids):
    """Euclidean distance from each probe to the nearest image of each gallery identity."""
    probes = np.ascontiguousarray(probes, dtype=np.float64)
    gallery = np.ascontiguousarray(gallery, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if _accel.USE_NUMBA:
        return _min_dist_per_identity_jit(probes, gallery, labels, int(n_ids))
    return _min_dist_per_identity_np(probes, gallery, labels, int(n_ids))


@njit(nogil=True)
def _tie_ranks_jit(dist, true_idx):
    n_q, n_ids = dist.shape
    out = np.empty(n_q)
    for q in range(n_q):
        ref = dist[q, true_idx[q]]
        less = 0
        ties = 0
        for g in range(n_ids):
            if g == true_idx[q]:
                continue
            v = dist[q, g]
            if v < ref:
                less += 1
            elif v == ref:
                ties += 1
        out[q] = 1.0 + less + 0.5 * ties
    return out


def _tie_ranks_np(dist, true_idx):
    ref = dist[np.arange(dist.shape[0]), true_idx][:, None]
    less = np.sum(dist < ref, axis=1)
    ties = np.sum(dist == ref, axis=1) - 1
    return 1.0 + less + 0.5 * ties


def tie_ranks(dist, true_idx):
    """Rank of the true column in each row; tied identities share the average rank."""
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    true_idx = np.ascontiguousarray(true_idx, dtype=np.int64)
    if _accel.USE_NUMBA:
        return _tie_ranks_jit(dist, true_idx)
    return _tie_ranks_np(dist, true_idx)


KERNELS = {
    "pixel_mix_forward": (_pixel_mix_forward_np, _pixel_mix_forward_jit),
    "pixel_mix_inverse": (_pixel_mix_inverse_np, _pixel_mix_inverse_jit),
    "pair_counts": (_pair_counts_np, _pair_counts_jit),
    "min_distance_per_identity": (_min_dist_per_identity_np, _min_dist_per_identity_jit),
    "tie_ranks": (_tie_ranks_np, _tie_ranks_jit),
}
