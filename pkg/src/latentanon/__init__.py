"""Identity anonymization by latent-space manipulation of a style-based face generator."""

__version__ = "0.1.0"
