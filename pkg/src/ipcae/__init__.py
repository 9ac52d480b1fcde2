"""Concrete autoencoder feature selection with indirectly parametrized logits."""

__version__ = "0.1.0"
