"""Desk-scale synthetic face world with planted ground truth.

The generator is linear: latent coordinates are grouped in threes and each
group drives the three colour channels of one pixel through a fixed,
well-conditioned 3x3 matrix. Every group lives inside one region of a
canonical face layout, so pixel-space region swaps translate into exact
coordinate swaps after re-encoding. The encoder is the pseudo-inverse of the
generator.

Identity is read from a declared set of coordinates (by default 64 channels
in each of layers 5, 6 and 7); each attribute is a logistic function of its
own coordinate set.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from latentanon import kernels
from latentanon.backends.base import LABEL_IDS, LABELS, BackendBundle, ShapeDescriptor
from latentanon.errors import ConfigError
from latentanon.latent import ChannelBlock, check_blocks

DEFAULT_IDENTITY_BLOCKS = ((5, 0, 64), (6, 0, 64), (7, 0, 64))
IDENTITY_REGION_WEIGHTS = {"eyes": 0.35, "nose": 0.2, "mouth": 0.2, "skin": 0.25}
FILLER_REGIONS = ("skin", "hair", "background", "other")


@dataclass
class WorldConfig:
    seed: int = 0
    n_layers: int = 18
    n_channels: int = 512
    image_size: int = 96
    identity_blocks: tuple = DEFAULT_IDENTITY_BLOCKS
    n_attributes: int = 8
    attribute_channel_start: int = 256
    attribute_channels_per_layer: int = 2
    attribute_layers: tuple = ()  # empty = every layer
    coupled_attributes: tuple = ()  # attributes that read the identity coordinates
    attribute_scale: float = 1.5
    noise_scale: float = 0.0
    normalize_embedding: bool = True
    latent_mean_scale: float = 0.5

    def __post_init__(self):
        self.identity_blocks = tuple(ChannelBlock(*map(int, b)) for b in self.identity_blocks)
        self.attribute_layers = tuple(int(v) for v in self.attribute_layers)
        self.coupled_attributes = tuple(int(v) for v in self.coupled_attributes)

    # key-value file ---------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "identity_blocks":
                v = ", ".join(f"{b.layer}:{b.start}:{b.length}" for b in v)
            elif isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, raw: dict) -> "WorldConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"unknown synthetic-world key {key!r}")
            default = getattr(cls(), key)
            value = str(value).strip()
            try:
                if key == "identity_blocks":
                    kwargs[key] = tuple(
                        tuple(int(p) for p in item.split(":")) for item in value.split(",") if item.strip()
                    )
                elif isinstance(default, tuple):
                    kwargs[key] = tuple(int(x) for x in value.split(",") if x.strip())
                elif isinstance(default, bool):
                    kwargs[key] = value.lower() in ("1", "true", "yes", "on")
                elif isinstance(default, int):
                    kwargs[key] = int(value)
                else:
                    kwargs[key] = float(value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {value!r}") from exc
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "WorldConfig":
        parser = configparser.ConfigParser()
        try:
            parser.read_string("[world]\n" + Path(path).read_text())
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read synthetic-world config {path}: {exc}") from exc
        return cls.from_mapping(dict(parser["world"]))


def face_layout(size: int) -> np.ndarray:
    """Canonical label map of a frontal face on a ``size x size`` grid."""
    v, u = np.mgrid[0:size, 0:size]
    u = (u + 0.5) / size
    v = (v + 0.5) / size

    def ellipse(cu, cv, ru, rv):
        return ((u - cu) / ru) ** 2 + ((v - cv) / rv) ** 2 <= 1.0

    labels = np.full((size, size), LABEL_IDS["background"], dtype=np.int64)
    labels[ellipse(0.5, 0.42, 0.40, 0.40) & (v < 0.62)] = LABEL_IDS["hair"]
    labels[(v > 0.86) & (np.abs(u - 0.5) < 0.22)] = LABEL_IDS["other"]
    labels[ellipse(0.5, 0.56, 0.30, 0.36)] = LABEL_IDS["skin"]
    labels[ellipse(0.37, 0.46, 0.085, 0.045) | ellipse(0.63, 0.46, 0.085, 0.045)] = LABEL_IDS["eyes"]
    labels[ellipse(0.5, 0.58, 0.05, 0.09)] = LABEL_IDS["nose"]
    labels[ellipse(0.5, 0.75, 0.12, 0.045)] = LABEL_IDS["mouth"]
    return labels


def _random_mixing(rng, n):
    q, _ = np.linalg.qr(rng.standard_normal((n, 3, 3)))
    scales = rng.uniform(0.6, 1.4, size=(n, 3))
    return q * scales[:, None, :]


class SyntheticWorld(BackendBundle):
    """Linear toy generator with planted identity and attribute coordinates."""

    def __init__(self, config: WorldConfig | None = None, **overrides):
        cfg = config or WorldConfig()
        if overrides:
            cfg = WorldConfig(**{**asdict(cfg), **overrides})
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        lat_shape = (cfg.n_layers, cfg.n_channels)
        n_coords = cfg.n_layers * cfg.n_channels

        self.identity_blocks = check_blocks(cfg.identity_blocks, lat_shape)
        id_mask = np.zeros(lat_shape, dtype=bool)
        for b in self.identity_blocks:
            id_mask[b.layer, b.start : b.start + b.length] = True
        if not id_mask.any():
            raise ConfigError("synthetic world needs at least one identity coordinate")
        self.identity_mask = id_mask
        self.identity_index = np.flatnonzero(id_mask.ravel())

        self.attribute_index = self._plant_attributes(cfg, lat_shape)
        weights = []
        for idx in self.attribute_index:
            w = rng.uniform(0.5, 1.5, size=len(idx))
            weights.append(cfg.attribute_scale * w / np.sqrt(np.sum(w**2)))
        self.attribute_weights = weights

        self.mapper_mean = cfg.latent_mean_scale * rng.standard_normal(lat_shape)
        self.mapper_scale = rng.uniform(0.8, 1.2, size=lat_shape)
        attr_bias = []
        for idx, w in zip(self.attribute_index, self.attribute_weights):
            attr_bias.append(-float(w @ self.mapper_mean.ravel()[idx]))
        self.attribute_bias = np.asarray(attr_bias)

        self.layout = face_layout(cfg.image_size)
        self._build_pixel_map(rng, n_coords)

        shape = ShapeDescriptor(
            n_layers=cfg.n_layers,
            n_channels=cfg.n_channels,
            image_shape=(cfg.image_size, cfg.image_size, 3),
            embedding_dim=len(self.identity_index),
            n_attributes=cfg.n_attributes,
        )
        super().__init__(shape)
        self.embedding_normalized = cfg.normalize_embedding
        digest = hashlib.sha256(cfg.to_text().encode()).hexdigest()[:12]
        self.backend_id = f"synthetic-{digest}"

    # -- construction helpers -------------------------------------------------
    def _plant_attributes(self, cfg, lat_shape):
        n_layers, n_channels = lat_shape
        layers = cfg.attribute_layers or tuple(range(n_layers))
        per = cfg.attribute_channels_per_layer
        out = []
        taken = np.zeros(lat_shape, dtype=bool)
        for j in range(cfg.n_attributes):
            if j in cfg.coupled_attributes:
                out.append(self.identity_index.copy())
                continue
            start = cfg.attribute_channel_start + j * per
            if start + per > n_channels:
                raise ConfigError("attribute channels exceed latent width")
            m = np.zeros(lat_shape, dtype=bool)
            m[list(layers), start : start + per] = True
            if np.any(m & self.identity_mask) or np.any(m & taken):
                raise ConfigError(f"attribute {j} overlaps identity or another attribute")
            taken |= m
            out.append(np.flatnonzero(m.ravel()))
        return out

    def _build_pixel_map(self, rng, n_coords):
        cfg = self.config
        flat_layout = self.layout.ravel()
        region_pixels = {
            name: rng.permutation(np.flatnonzero(flat_layout == LABEL_IDS[name])) for name in LABELS
        }
        region_of = np.empty(n_coords, dtype=object)
        id_coords = rng.permutation(self.identity_index)
        cuts = np.cumsum([IDENTITY_REGION_WEIGHTS[r] for r in IDENTITY_REGION_WEIGHTS])
        cuts = np.round(cuts / cuts[-1] * len(id_coords)).astype(int)
        lo = 0
        for name, hi in zip(IDENTITY_REGION_WEIGHTS, cuts):
            region_of[id_coords[lo:hi]] = name
            lo = hi
        rest = np.setdiff1d(np.arange(n_coords), self.identity_index)
        region_of[rest] = rng.choice(FILLER_REGIONS, size=len(rest), p=[0.2, 0.3, 0.4, 0.1])

        groups, locs = [], []
        cursor = {name: 0 for name in LABELS}
        for name in LABELS:
            coords = rng.permutation(np.flatnonzero(region_of == name))
            for k in range(0, len(coords), 3):
                g = np.full(3, -1, dtype=np.int64)
                chunk = coords[k : k + 3]
                g[: len(chunk)] = chunk
                if cursor[name] >= len(region_pixels[name]):
                    raise ConfigError(
                        f"region {name!r} has too few pixels for its coordinates; raise image_size"
                    )
                groups.append(g)
                locs.append(region_pixels[name][cursor[name]])
                cursor[name] += 1
        self.coord_groups = np.asarray(groups, dtype=np.int64)
        self.pixel_locs = np.asarray(locs, dtype=np.int64)
        mats = _random_mixing(rng, len(groups))
        valid = (self.coord_groups >= 0).astype(np.float64)
        mats = mats * valid[:, None, :]
        self.mixing = np.ascontiguousarray(mats)
        self.unmixing = np.ascontiguousarray(np.linalg.pinv(mats))
        self.coord_region = np.array([LABEL_IDS[r] for r in region_of], dtype=np.int64)
        self._n_loc = cfg.image_size * cfg.image_size
        self._n_coords = n_coords
        self._noise_rng_seed = cfg.seed

    # -- backend hooks -------------------------------------------------------
    def _generate(self, latents):
        x = latents.reshape(latents.shape[0], -1)
        img = kernels.pixel_mix_forward(x, self.coord_groups, self.mixing, self.pixel_locs, self._n_loc)
        if self.config.noise_scale > 0:
            for b in range(img.shape[0]):
                h = hashlib.sha256(np.ascontiguousarray(x[b]).tobytes()).digest()
                rng = np.random.default_rng([self._noise_rng_seed, int.from_bytes(h[:8], "little")])
                img[b] += self.config.noise_scale * rng.standard_normal(img[b].shape)
        s = self.config.image_size
        return img.reshape(-1, s, s, 3)

    def _encode(self, images):
        img = images.reshape(images.shape[0], self._n_loc, 3)
        x = kernels.pixel_mix_inverse(img, self.coord_groups, self.unmixing, self.pixel_locs, self._n_coords)
        return x.reshape((-1,) + self.shape.latent_shape)

    def _identity_from_latent(self, latents):
        e = latents.reshape(latents.shape[0], -1)[:, self.identity_index]
        if self.embedding_normalized:
            norm = np.linalg.norm(e, axis=1, keepdims=True)
            e = np.divide(e, norm, out=np.zeros_like(e), where=norm > 0)
        return e

    def _attributes_from_latent(self, latents):
        flat = latents.reshape(latents.shape[0], -1)
        pre = np.stack(
            [flat[:, idx] @ w for idx, w in zip(self.attribute_index, self.attribute_weights)], axis=1
        )
        pre = pre + self.attribute_bias
        eps = 1e-12
        return np.clip(1.0 / (1.0 + np.exp(-pre)), eps, 1.0 - eps)

    def _embed(self, images):
        return self._identity_from_latent(self._encode(images))

    def _attributes(self, images):
        return self._attributes_from_latent(self._encode(images))

    def score_images(self, images):
        x, lead = self._batched(images, self.shape.image_shape, "image")
        lat = self._encode(x)
        e = self._identity_from_latent(lat)
        a = self._attributes_from_latent(lat)
        return e.reshape(lead + e.shape[1:]), a.reshape(lead + a.shape[1:])

    def _parse(self, images):
        return np.broadcast_to(self.layout, (images.shape[0],) + self.layout.shape).copy()

    def sample_random_latent(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng([self.config.seed, 7919, int(seed)])
        z = rng.standard_normal(self.shape.latent_shape)
        return self.mapper_mean + self.mapper_scale * z

    def clone(self) -> "SyntheticWorld":
        return SyntheticWorld(self.config)

    def identity_similarity_grad(self, latents, reference_embeddings):
        latents = np.asarray(latents, dtype=np.float64)
        lead = latents.shape[:-2]
        lat = latents.reshape((-1,) + self.shape.latent_shape)
        ref = np.asarray(reference_embeddings, dtype=np.float64).reshape(lat.shape[0], -1)
        # encode(generate(L)) = L + encode(noise); the hash-seeded noise term is treated as constant
        recon = self._encode(self._generate(lat))
        x = recon.reshape(lat.shape[0], -1)[:, self.identity_index]
        xn = np.linalg.norm(x, axis=1, keepdims=True)
        rn = np.linalg.norm(ref, axis=1, keepdims=True)
        x_hat = np.divide(x, xn, out=np.zeros_like(x), where=xn > 0)
        r_hat = np.divide(ref, rn, out=np.zeros_like(ref), where=rn > 0)
        cos = np.sum(x_hat * r_hat, axis=1)
        gx = np.divide(r_hat - cos[:, None] * x_hat, xn, out=np.zeros_like(x), where=xn > 0)
        grad = np.zeros((lat.shape[0], self._n_coords))
        grad[:, self.identity_index] = gx
        return cos.reshape(lead), grad.reshape(lead + self.shape.latent_shape)

    # -- ground truth ------------------------------------------------------
    def generator_matrix(self) -> np.ndarray:
        """Dense ``(H*W*3, n_coords)`` generator matrix; only sensible for small worlds."""
        g = np.zeros((self._n_loc * 3, self._n_coords))
        for p, (grp, loc) in enumerate(zip(self.coord_groups, self.pixel_locs)):
            for j, c in enumerate(grp):
                if c >= 0:
                    g[loc * 3 : loc * 3 + 3, c] = self.mixing[p, :, j]
        return g

    def planted_identity_layers(self) -> tuple[int, ...]:
        return tuple(sorted({b.layer for b in self.identity_blocks}))

    def attribute_coordinate_mask(self, j: int) -> np.ndarray:
        m = np.zeros(self.shape.n_layers * self.shape.n_channels, dtype=bool)
        m[self.attribute_index[j]] = True
        return m.reshape(self.shape.latent_shape)
