"""Feature-aware identity masking in pixel space.

The caller names the regions to *replace*. Internally the composition mask
is the complement (1 = keep source pixel, 0 = take the replacement pixel), so
``O = S * mask + R' * (1 - mask)``.
"""
from __future__ import annotations

import numpy as np

from latentanon.backends.base import LABEL_IDS, LABELS
from latentanon.errors import DataError, ShapeError
from latentanon.latent import blend

REGIONS = {
    "eyes": ("eyes",),
    "nose": ("nose",),
    "mouth": ("mouth",),
    "face": ("skin", "eyes", "nose", "mouth"),
    "hair": ("hair",),
    "full": LABELS,
}

# Mask sweep from none to full masking, in increasing swapped area.
REGION_CHAIN = (
    (),
    ("eyes",),
    ("eyes", "nose"),
    ("eyes", "nose", "mouth"),
    ("face",),
    ("face", "hair"),
    ("full",),
)

OPERAND_PAIRS = ("source-random", "source-mask")

# Fixed palette for rendering label maps as images (values in [-1, 1]).
_PALETTE = np.array(
    [
        [-1.0, -1.0, -1.0],
        [0.6, 0.2, 0.0],
        [0.0, 0.0, 1.0],
        [0.8, 0.0, 0.4],
        [1.0, -0.6, -0.6],
        [-0.4, -0.8, 0.2],
        [0.2, 0.2, 0.2],
    ]
)


def region_labels(swap_regions) -> set[int]:
    ids = set()
    for name in swap_regions:
        if name not in REGIONS:
            raise ValueError(f"unknown region {name!r}; choose from {sorted(REGIONS)}")
        ids.update(LABEL_IDS[lab] for lab in REGIONS[name])
    return ids


def region_mask(seg, swap_regions) -> np.ndarray:
    """Pixel mask: 0 on pixels whose label falls in ``swap_regions``, 1 elsewhere."""
    seg = np.asarray(seg)
    if seg.size and (seg.min() < 0 or seg.max() >= len(LABELS)):
        raise DataError("segmentation contains labels outside the declared label set")
    ids = region_labels(swap_regions)
    return np.where(np.isin(seg, sorted(ids)), 0, 1).astype(np.uint8)


def render_mask(seg, channels: int = 3) -> np.ndarray:
    """Label map rendered with the fixed palette, for encoding masks into latent space."""
    seg = np.asarray(seg, dtype=np.int64)
    return _PALETTE[seg][..., :channels]


def generate_same_mask_face(S, seed: int, identity_mask, backend, operands: str = "source-random"):
    """Random-identity face R' that keeps the pose and layout of ``S``.

    ``identity_mask`` follows the latent mask convention (1 keeps the source
    coordinate). With ``operands="source-random"`` the masked-out coordinates
    come from a sampled latent; ``"source-mask"`` takes them from the latent
    of the rendered segmentation mask instead.
    """
    identity_mask = np.asarray(identity_mask, dtype=np.float64)
    L_S = backend.encode(S)
    if operands == "source-random":
        other = backend.sample_random_latent(seed)
    elif operands == "source-mask":
        other = backend.encode(render_mask(backend.parse_mask(S), backend.shape.image_shape[-1]))
    else:
        raise ValueError(f"operands must be one of {OPERAND_PAIRS}")
    return backend.generate(blend(L_S, other, identity_mask))


def _check_images(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def seg_swap(S, R_prime, mask) -> np.ndarray:
    """Take ``S`` where the mask is 1 and ``R_prime`` where it is 0."""
    S, R_prime = _check_images(S, R_prime)
    mask = np.asarray(mask)
    if mask.shape != S.shape[:2]:
        raise ShapeError(f"mask shape {mask.shape} does not match image {S.shape}")
    keep = (mask == 1)[..., None] if S.ndim == 3 else mask == 1
    return np.where(keep, S, R_prime)


def color_match(O, S, mask) -> np.ndarray:
    """Per-channel mean/std transfer from ``S`` to ``O`` inside the replaced region (mask == 0)."""
    O, S = _check_images(O, S)
    mask = np.asarray(mask)
    region = mask == 0
    if not region.any():
        raise DataError("color_match needs at least one replaced pixel")
    out = np.array(O, dtype=np.float64, copy=True)
    for c in range(out.shape[-1]):
        o = out[..., c][region]
        s = np.asarray(S[..., c], dtype=np.float64)[region]
        mu_o, sd_o = o.mean(), o.std()
        mu_s, sd_s = s.mean(), s.std()
        if sd_o > 0:
            vals = (o - mu_o) * (sd_s / sd_o) + mu_s
        else:
            vals = np.full_like(o, mu_s)
        chan = out[..., c]
        chan[region] = vals
    return out


def anonymize_masked(S, swap_regions, seed, identity_mask, backend, color: bool = False,
                     operands: str = "source-random", seg=None) -> np.ndarray:
    """Replace ``swap_regions`` of ``S`` with the same regions of a same-layout random face.

    ``seg`` overrides the backend parser with a stored segmentation.
    """
    swap_regions = tuple(swap_regions)
    S = np.asarray(S, dtype=np.float64)
    if not swap_regions:
        return S.copy()
    mask = region_mask(backend.parse_mask(S) if seg is None else seg, swap_regions)
    R_prime = generate_same_mask_face(S, seed, identity_mask, backend, operands)
    O = seg_swap(S, R_prime, mask)
    if color and (mask == 0).any():
        O = color_match(O, S, mask)
    return O
