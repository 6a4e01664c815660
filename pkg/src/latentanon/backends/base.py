"""Common backend surface shared by the synthetic world and external models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from latentanon.errors import ShapeError

LABELS = ("background", "skin", "eyes", "nose", "mouth", "hair", "other")
LABEL_IDS = {name: i for i, name in enumerate(LABELS)}


@dataclass(frozen=True)
class ShapeDescriptor:
    n_layers: int
    n_channels: int
    image_shape: tuple[int, int, int]  # (height, width, channels)
    embedding_dim: int
    n_attributes: int

    @property
    def latent_shape(self) -> tuple[int, int]:
        return (self.n_layers, self.n_channels)


class BackendBundle:
    """Generator, encoder, z-mapper, identity embedder, attribute classifier and parser.

    Subclasses implement the batched ``_generate``/``_encode``/... hooks on
    arrays with a leading batch axis; the public methods validate shapes and
    accept either a single item or a stack.

    Instances are single-consumer. Use :meth:`clone` to build a worker pool.
    """

    backend_id = "abstract"
    embedding_normalized = True

    def __init__(self, shape: ShapeDescriptor):
        self.shape = shape

    # -- hooks ------------------------------------------------------------
    def _generate(self, latents: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _encode(self, images: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _embed(self, images: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _attributes(self, images: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _parse(self, images: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_random_latent(self, seed: int) -> np.ndarray:
        raise NotImplementedError

    def clone(self) -> "BackendBundle":
        raise NotImplementedError

    # -- public, shape-checked -------------------------------------------
    def _batched(self, arr, tail: tuple, what: str):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim < len(tail) or arr.shape[arr.ndim - len(tail):] != tuple(tail):
            raise ShapeError(f"{what} shape {arr.shape} does not end with {tuple(tail)}")
        lead = arr.shape[: arr.ndim - len(tail)]
        return arr.reshape((-1,) + tuple(tail)), lead

    def generate(self, latents) -> np.ndarray:
        x, lead = self._batched(latents, self.shape.latent_shape, "latent")
        return self._generate(x).reshape(lead + self.shape.image_shape)

    def encode(self, images) -> np.ndarray:
        x, lead = self._batched(images, self.shape.image_shape, "image")
        return self._encode(x).reshape(lead + self.shape.latent_shape)

    def embed_identity(self, images) -> np.ndarray:
        x, lead = self._batched(images, self.shape.image_shape, "image")
        out = self._embed(x)
        return out.reshape(lead + out.shape[1:])

    def predict_attributes(self, images) -> np.ndarray:
        x, lead = self._batched(images, self.shape.image_shape, "image")
        out = self._attributes(x)
        return out.reshape(lead + out.shape[1:])

    def parse_mask(self, images) -> np.ndarray:
        x, lead = self._batched(images, self.shape.image_shape, "image")
        return self._parse(x).reshape(lead + self.shape.image_shape[:2])

    def identity_similarity_grad(self, latents, reference_embeddings):
        """Cosine similarity of ``embed(generate(latents))`` to references, and its latent gradient.

        Only backends that can differentiate their generator and embedder
        implement this; it is needed by swapper training with an identity term.
        """
        raise NotImplementedError(f"{type(self).__name__} provides no identity gradient")

    # -- convenience ---------------------------------------------------------
    def score_images(self, images):
        """Identity embeddings and attribute vectors of ``images`` in one call."""
        return self.embed_identity(images), self.predict_attributes(images)

    def score_latents(self, latents):
        """Identity embeddings and attribute vectors of ``generate(latents)``."""
        return self.score_images(self.generate(latents))
