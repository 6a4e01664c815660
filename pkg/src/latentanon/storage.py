"""Image, segmentation and dataset-manifest I/O, plus the latent cache.

Images are float arrays ``(H, W, 3)``. ``.npy`` files store them exactly;
raster files (PNG and friends) are read scaled to [0, 1] and written back at
the bit depth they were read with, so an unmodified array round-trips to
identical bytes.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from latentanon.backends.base import LABELS
from latentanon.errors import DataError
from latentanon.latent import load_latent, save_latent

log = logging.getLogger(__name__)

RASTER_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
IMAGE_SUFFIXES = (".npy",) + RASTER_SUFFIXES


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------


def read_image(path) -> tuple[np.ndarray, dict]:
    """Return ``(image, info)``; ``info['bit_depth']`` is 8/16 for rasters and None for ``.npy``."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".npy":
        try:
            arr = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
        return np.asarray(arr, dtype=np.float64), {"bit_depth": None}
    if suffix not in RASTER_SUFFIXES:
        raise DataError(f"unsupported image type {path.suffix!r}")
    import cv2

    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DataError(f"cannot read {path}")
    if raw.ndim == 2:
        raw = np.repeat(raw[..., None], 3, axis=2)
    elif raw.shape[2] == 4:
        raw = raw[..., :3]
    raw = raw[..., ::-1]  # BGR -> RGB
    depth = 16 if raw.dtype == np.uint16 else 8
    return raw.astype(np.float64) / (2**depth - 1), {"bit_depth": depth}


def write_image(path, image, bit_depth: int | None = 8) -> Path:
    """Write ``.npy`` exactly or a raster clipped to [0, 1] at ``bit_depth`` (8 or 16)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image = np.asarray(image, dtype=np.float64)
    if path.suffix.lower() == ".npy":
        np.save(path, image, allow_pickle=False)
        return path
    import cv2

    depth = bit_depth or 8
    if depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    top = 2**depth - 1
    q = np.rint(np.clip(image, 0.0, 1.0) * top).astype(np.uint16 if depth == 16 else np.uint8)
    if not cv2.imwrite(str(path), np.ascontiguousarray(q[..., ::-1])):
        raise DataError(f"cannot write {path}")
    return path


def preview(image) -> np.ndarray:
    """Min-max stretch to [0, 1] for viewing real-valued synthetic images."""
    image = np.asarray(image, dtype=np.float64)
    lo, hi = image.min(), image.max()
    return np.zeros_like(image) if hi <= lo else (image - lo) / (hi - lo)


def write_segmentation(path, seg) -> Path:
    """Label PNG (one byte per pixel) plus ``<stem>.labels.json`` naming each label id."""
    import cv2

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    seg = np.asarray(seg)
    if seg.ndim != 2 or seg.min(initial=0) < 0 or seg.max(initial=0) >= len(LABELS):
        raise DataError("segmentation must be a 2-D map of known label ids")
    cv2.imwrite(str(path), seg.astype(np.uint8))
    path.with_suffix(".labels.json").write_text(json.dumps(dict(enumerate(LABELS)), indent=2) + "\n")
    return path


def read_segmentation(path) -> np.ndarray:
    import cv2

    seg = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if seg is None or seg.ndim != 2:
        raise DataError(f"cannot read segmentation {path}")
    if seg.max(initial=0) >= len(LABELS):
        raise DataError(f"{path} holds labels outside the known set")
    return seg.astype(np.int64)


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    image_id: str
    path: str
    identity: str | None = None
    attributes: tuple | None = None
    segmentation: str | None = None


@dataclass
class DatasetManifest:
    root: str
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def ids(self) -> list:
        return [e.image_id for e in self.entries]

    @property
    def identities(self) -> list | None:
        if not self.entries or any(e.identity is None for e in self.entries):
            return None
        return [e.identity for e in self.entries]

    def to_json(self) -> str:
        return json.dumps(
            {"root": self.root, "entries": [e.__dict__ for e in self.entries]}, indent=2, sort_keys=True
        )

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        entries = [ManifestEntry(**{**e, "attributes": None if e.get("attributes") is None else tuple(e["attributes"])})
                   for e in d["entries"]]
        return cls(root=d["root"], entries=entries)

    def load_images(self) -> list[tuple[str, np.ndarray]]:
        return [(e.image_id, read_image(e.path)[0]) for e in self.entries]


def _read_labels(path):
    """CSV with header ``image_id`` plus optional ``identity``, ``segmentation`` and ``attr_*`` columns."""
    out = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or "image_id" not in reader.fieldnames:
            raise DataError(f"{path}: labels need an image_id column")
        attr_cols = [c for c in reader.fieldnames if c.startswith("attr_")]
        for row in reader:
            iid = row["image_id"]
            if iid in out:
                raise DataError(f"{path}: duplicate label row for {iid!r}")
            attrs = tuple(float(row[c]) for c in attr_cols) if attr_cols else None
            out[iid] = (row.get("identity") or None, attrs, row.get("segmentation") or None)
    return out


def ingest(directory, labels=None) -> DatasetManifest:
    """One entry per supported image file in ``directory``, ordered by file name.

    Image ids are file stems; two files sharing a stem are an error. Label
    rows for absent images are an error too.
    """
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"dataset directory not readable: {d}")
    files = sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        log.warning("no images found in %s", d)
    seen = {}
    for p in files:
        if p.stem in seen:
            raise DataError(f"duplicate image id {p.stem!r}: {seen[p.stem].name} and {p.name}")
        seen[p.stem] = p
    lab = _read_labels(labels) if labels else {}
    unknown = sorted(set(lab) - set(seen))
    if unknown:
        raise DataError(f"labels reference missing images: {unknown[:5]}")
    entries = []
    for stem in sorted(seen):
        ident, attrs, seg = lab.get(stem, (None, None, None))
        if seg is not None:
            seg_path = (d / seg) if not Path(seg).is_absolute() else Path(seg)
            if not seg_path.is_file():
                raise DataError(f"segmentation for {stem!r} not found: {seg_path}")
            seg = str(seg_path)
        entries.append(ManifestEntry(stem, str(seen[stem]), ident, attrs, seg))
    return DatasetManifest(root=str(d), entries=entries)


# ---------------------------------------------------------------------------
# latent cache
# ---------------------------------------------------------------------------


@dataclass
class CacheReport:
    encoded: list
    skipped: list
    failed: dict

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def _cache_current(bin_path: Path, image_hash: str, backend_id: str) -> bool:
    try:
        _, meta = load_latent(bin_path)
    except (DataError, OSError, ValueError, KeyError):
        return False
    return meta.get("image_sha256") == image_hash and meta.get("backend_id") == backend_id


def cache_latents(manifest: DatasetManifest, backend, cache_dir) -> CacheReport:
    """Encode each image once; entries whose sidecar matches image hash and backend are skipped.

    A per-image failure is recorded and the rest continue.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    encoded, skipped, failed = [], [], {}
    for e in manifest.entries:
        bin_path = cache_dir / f"{e.image_id}.bin"
        try:
            h = file_sha256(e.path)
            if _cache_current(bin_path, h, backend.backend_id):
                skipped.append(e.image_id)
                continue
            img, _ = read_image(e.path)
            lat = backend.encode(img)
            save_latent(bin_path, lat, backend.backend_id, e.image_id, image_sha256=h)
            encoded.append(e.image_id)
        except Exception as exc:  # recorded per image; the run continues
            log.warning("encode failed for %s: %s", e.image_id, exc)
            failed[e.image_id] = f"{type(exc).__name__}: {exc}"
    return CacheReport(encoded, skipped, failed)


def cached_latent(cache_dir, image_id: str) -> np.ndarray:
    return load_latent(Path(cache_dir) / f"{image_id}.bin")[0]
