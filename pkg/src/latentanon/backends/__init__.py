"""Model backends: the synthetic planted-truth world and the serialized-model adapter."""
from latentanon.backends.base import LABEL_IDS, LABELS, BackendBundle, ShapeDescriptor
from latentanon.backends.synthetic import SyntheticWorld, WorldConfig, face_layout

__all__ = [
    "BackendBundle",
    "LABELS",
    "LABEL_IDS",
    "ShapeDescriptor",
    "SyntheticWorld",
    "WorldConfig",
    "face_layout",
    "load_backend",
]


def load_backend(selector: str, **kwargs) -> BackendBundle:
    """Build a backend from a selector string.

    ``synthetic`` or ``synthetic:<world.cfg>`` gives a :class:`SyntheticWorld`;
    ``onnx:<dir>`` loads serialized models through :class:`OnnxBackend`.
    """
    from pathlib import Path

    from latentanon.errors import ConfigError

    kind, _, arg = selector.partition(":")
    if kind == "synthetic":
        cfg = WorldConfig.from_file(arg) if arg else WorldConfig(**kwargs)
        return SyntheticWorld(cfg)
    if kind == "onnx":
        from latentanon.backends.external import OnnxBackend

        if not arg or not Path(arg).is_dir():
            raise ConfigError(f"onnx backend directory not found: {arg!r}")
        return OnnxBackend(arg)
    raise ConfigError(f"unknown backend selector {selector!r}")
