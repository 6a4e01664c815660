"""Adapter for externally trained models stored as ONNX graphs.

A backend directory holds ``backend.json`` plus one ``.onnx`` file per
component::

    backend.json        shape descriptor and options (schema below)
    generator.onnx      latents (B, L, C)      -> images (B, H, W, 3) or (B, 3, H, W)
    encoder.onnx        images                 -> latents (B, L, C)
    mapper.onnx         z (B, z_dim)           -> latents (B, L, C)
    identity.onnx       images                 -> embeddings (B, D)
    attributes.onnx     images                 -> confidences (B, M) in (0, 1)
    parser.onnx         images                 -> labels (B, H, W) or scores (B, K, H, W)
    identity_grad.onnx  (latents, ref (B, D))  -> (similarity (B,), gradient (B, L, C))   [optional]

``backend.json`` keys: ``n_layers``, ``n_channels``, ``image_shape`` ([H, W, 3]),
``embedding_dim``, ``n_attributes``, ``z_dim``; optional ``image_layout``
("NHWC" default or "NCHW"), ``normalize_embedding`` (default true),
``parser_labels`` (label name per parser class, default the canonical set),
``backend_id``.

Only inference runs here. Sessions use one thread with graph optimizations
disabled so that repeated calls are bit-identical.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from latentanon.backends.base import LABEL_IDS, LABELS, BackendBundle, ShapeDescriptor
from latentanon.errors import BackendError, ConfigError

REQUIRED = ("generator", "encoder", "mapper", "identity", "attributes", "parser")
OPTIONAL = ("identity_grad",)


def _session(path: Path):
    import onnxruntime as ort

    opts = ort.SessionOptions()
    opts.intra_op_num_threads = 1
    opts.inter_op_num_threads = 1
    opts.graph_optimization_level = ort.GraphOptimizationLevel.ORT_DISABLE_ALL
    try:
        return ort.InferenceSession(str(path), sess_options=opts, providers=["CPUExecutionProvider"])
    except Exception as exc:  # onnxruntime raises its own exception hierarchy
        raise BackendError(f"cannot load {path.name}: {exc}") from exc


class OnnxBackend(BackendBundle):
    def __init__(self, directory):
        self.directory = Path(directory)
        meta_path = self.directory / "backend.json"
        if not meta_path.is_file():
            raise ConfigError(f"missing {meta_path}")
        try:
            self.meta = json.loads(meta_path.read_text())
            shape = ShapeDescriptor(
                n_layers=int(self.meta["n_layers"]),
                n_channels=int(self.meta["n_channels"]),
                image_shape=tuple(int(v) for v in self.meta["image_shape"]),
                embedding_dim=int(self.meta["embedding_dim"]),
                n_attributes=int(self.meta["n_attributes"]),
            )
            self.z_dim = int(self.meta["z_dim"])
        except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"invalid backend.json: {exc}") from exc
        super().__init__(shape)
        self.layout = self.meta.get("image_layout", "NHWC")
        if self.layout not in ("NHWC", "NCHW"):
            raise ConfigError("image_layout must be NHWC or NCHW")
        self.embedding_normalized = bool(self.meta.get("normalize_embedding", True))
        names = self.meta.get("parser_labels", list(LABELS))
        try:
            self._label_lut = np.array([LABEL_IDS[n] for n in names], dtype=np.int64)
        except KeyError as exc:
            raise ConfigError(f"unknown parser label {exc}") from exc
        digest = hashlib.sha256()
        self.sessions = {}
        for name in REQUIRED + OPTIONAL:
            p = self.directory / f"{name}.onnx"
            if not p.is_file():
                if name in REQUIRED:
                    raise ConfigError(f"missing component model {p}")
                continue
            digest.update(p.read_bytes())
            self.sessions[name] = _session(p)
        self.backend_id = self.meta.get("backend_id") or f"onnx-{digest.hexdigest()[:12]}"

    def _run(self, name, *inputs):
        sess = self.sessions[name]
        feeds = {i.name: np.ascontiguousarray(x, dtype=np.float32) for i, x in zip(sess.get_inputs(), inputs)}
        try:
            outs = sess.run(None, feeds)
        except Exception as exc:
            raise BackendError(f"{name} inference failed: {exc}") from exc
        return [np.asarray(o, dtype=np.float64) for o in outs]

    def _to_model(self, images):
        return images.transpose(0, 3, 1, 2) if self.layout == "NCHW" else images

    def _from_model(self, images):
        return images.transpose(0, 2, 3, 1) if self.layout == "NCHW" else images

    def _generate(self, latents):
        return self._from_model(self._run("generator", latents)[0])

    def _encode(self, images):
        return self._run("encoder", self._to_model(images))[0]

    def _embed(self, images):
        e = self._run("identity", self._to_model(images))[0]
        if self.embedding_normalized:
            n = np.linalg.norm(e, axis=-1, keepdims=True)
            e = np.divide(e, n, out=np.zeros_like(e), where=n > 0)
        return e

    def _attributes(self, images):
        return self._run("attributes", self._to_model(images))[0]

    def _parse(self, images):
        out = self._run("parser", self._to_model(images))[0]
        labels = np.argmax(out, axis=1) if out.ndim == 4 else np.rint(out).astype(np.int64)
        if labels.min(initial=0) < 0 or labels.max(initial=0) >= self._label_lut.size:
            raise BackendError("parser produced labels outside its declared set")
        return self._label_lut[labels]

    def sample_random_latent(self, seed: int) -> np.ndarray:
        z = np.random.default_rng(int(seed)).standard_normal((1, self.z_dim))
        return self._run("mapper", z)[0].reshape(self.shape.latent_shape)

    def clone(self) -> "OnnxBackend":
        return OnnxBackend(self.directory)

    def identity_similarity_grad(self, latents, reference_embeddings):
        if "identity_grad" not in self.sessions:
            raise NotImplementedError("backend directory has no identity_grad.onnx")
        x, lead = self._batched(latents, self.shape.latent_shape, "latent")
        ref = np.asarray(reference_embeddings, dtype=np.float64).reshape(-1, self.shape.embedding_dim)
        sim, grad = self._run("identity_grad", x, ref)
        return sim.reshape(lead), grad.reshape(lead + self.shape.latent_shape)
