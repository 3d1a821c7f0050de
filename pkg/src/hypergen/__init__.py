"""Synthetic hypergraph generation by diffusion on logistic-model embeddings."""

__version__ = "0.1.0"
