"""Latent-code algebra: layer swaps, channel-block swaps and mask blending.

A latent code is a float array of shape ``(n_layers, n_channels)`` (layer
major). Every function also accepts stacked codes ``(..., n_layers,
n_channels)`` and never mutates its inputs.

Mask convention used throughout the package: ``1`` keeps the source
coordinate, ``0`` takes the coordinate from the other operand, i.e.
``blend(source, other, mask) = mask * source + (1 - mask) * other``.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence, Union

import numpy as np

from latentanon.errors import DataError, ShapeError

LAYOUT = "row-major(layers,channels)"


class ChannelBlock(NamedTuple):
    layer: int
    start: int
    length: int


LayerSet = Sequence[int]
ChannelBlockSet = Iterable[ChannelBlock]
Selection = Union[LayerSet, ChannelBlockSet]


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"latent shapes differ: {a.shape} vs {b.shape}")
    if a.ndim < 2:
        raise ShapeError(f"latent codes need at least 2 dims, got shape {a.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ShapeError("latent code contains NaN or Inf")


def as_latent(values, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Validate and return ``values`` as a float64 latent array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim < 2:
        raise ShapeError(f"latent codes need at least 2 dims, got shape {arr.shape}")
    if shape is not None and arr.shape[-2:] != tuple(shape):
        raise ShapeError(f"expected latent shape {tuple(shape)}, got {arr.shape[-2:]}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("latent code contains NaN or Inf")
    return arr


def check_layers(layers: LayerSet, n_layers: int) -> np.ndarray:
    layers = [int(i) for i in layers]
    idx = np.asarray(sorted(set(layers)), dtype=np.int64)
    if len(idx) != len(layers):
        raise ShapeError(f"duplicate layer indices in {list(layers)}")
    if idx.size and (idx[0] < 0 or idx[-1] >= n_layers):
        raise ShapeError(f"layer index out of range [0, {n_layers}): {list(layers)}")
    return idx


def check_blocks(blocks: ChannelBlockSet, shape: tuple[int, int]) -> list[ChannelBlock]:
    n_layers, n_channels = shape
    out = []
    for b in blocks:
        b = ChannelBlock(*(int(v) for v in b))
        if not (0 <= b.layer < n_layers):
            raise ShapeError(f"block layer out of range: {b}")
        if b.length < 1 or b.start < 0 or b.start + b.length > n_channels:
            raise ShapeError(f"block not inside its layer ({n_channels} channels): {b}")
        out.append(b)
    return out


def window(start: int, size: int) -> tuple[int, ...]:
    """Consecutive layers ``start .. start + size - 1``."""
    return tuple(range(start, start + size))


def _is_block_selection(selection) -> bool:
    items = list(selection)
    return bool(items) and not np.isscalar(items[0])


def selection_coords(selection: Selection, shape: tuple[int, int]) -> np.ndarray:
    """Boolean ``shape`` array, True on every coordinate the selection covers.

    Overlapping channel blocks resolve by union.
    """
    sel = np.zeros(shape, dtype=bool)
    items = list(selection)
    if not items:
        return sel
    if _is_block_selection(items):
        for b in check_blocks(items, shape):
            sel[b.layer, b.start : b.start + b.length] = True
    else:
        sel[check_layers(items, shape[0])] = True
    return sel


def swap_layers(source, target, layers: LayerSet) -> np.ndarray:
    """Copy of ``source`` whose listed layers (rows) come from ``target``."""
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_pair(source, target)
    idx = check_layers(layers, source.shape[-2])
    out = source.copy()
    out[..., idx, :] = target[..., idx, :]
    return out


def swap_channels(source, target, blocks: ChannelBlockSet) -> np.ndarray:
    """Copy of ``source`` with every coordinate covered by ``blocks`` taken from ``target``."""
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_pair(source, target)
    blocks = list(blocks)
    sel = np.zeros(source.shape[-2:], dtype=bool)
    for b in check_blocks(blocks, source.shape[-2:]):
        sel[b.layer, b.start : b.start + b.length] = True
    return np.where(sel, target, source)


def blend(source, other, mask) -> np.ndarray:
    """``mask * source + (1 - mask) * other``; the mask broadcasts over batch dims."""
    source = np.asarray(source, dtype=np.float64)
    other = np.asarray(other, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    _check_pair(source, other)
    if mask.shape[-2:] != source.shape[-2:]:
        raise ShapeError(f"mask shape {mask.shape} does not match latents {source.shape}")
    if np.any(mask < 0.0) or np.any(mask > 1.0) or not np.all(np.isfinite(mask)):
        raise ShapeError("mask entries must lie in [0, 1]")
    return mask * source + (1.0 - mask) * other


def mask_from_selection(selection: Selection, shape: tuple[int, int]) -> np.ndarray:
    """Binary mask with 0 on selected coordinates and 1 elsewhere.

    ``blend(s, t, mask_from_selection(sel, shape))`` equals the swap of
    ``sel`` from ``t`` into ``s``.
    """
    return np.where(selection_coords(selection, tuple(shape)), 0.0, 1.0)


# ---------------------------------------------------------------------------
# latent cache files
# ---------------------------------------------------------------------------


def save_latent(path, latent, backend_id: str, source_image_id: str, **extra) -> Path:
    """Write ``<path>.bin`` (little-endian float32, row-major) and ``<path>.json``."""
    path = Path(path)
    latent = np.asarray(latent, dtype=np.float64)
    data = np.ascontiguousarray(latent, dtype="<f4")
    bin_path = path.with_suffix(".bin")
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    bin_path.write_bytes(data.tobytes(order="C"))
    meta = {
        "shape": list(latent.shape),
        "layout": LAYOUT,
        "dtype": "float32-le",
        "backend_id": backend_id,
        "source_image_id": source_image_id,
        "sha256": hashlib.sha256(data.tobytes()).hexdigest(),
    }
    meta.update(extra)
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return bin_path


def load_latent(path) -> tuple[np.ndarray, dict]:
    """Read a cache entry written by :func:`save_latent`; raises DataError if it is damaged."""
    path = Path(path)
    try:
        meta = json.loads(path.with_suffix(".json").read_text())
        shape = tuple(int(v) for v in meta["shape"])
        raw = path.with_suffix(".bin").read_bytes()
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"unreadable latent cache entry {path}: {exc}") from exc
    if meta.get("layout") != LAYOUT:
        raise DataError(f"unsupported latent layout {meta.get('layout')!r} in {path}")
    if len(raw) != 4 * int(np.prod(shape)) or hashlib.sha256(raw).hexdigest() != meta.get("sha256"):
        raise DataError(f"latent cache entry {path} is truncated or corrupt")
    arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
    return arr, meta
