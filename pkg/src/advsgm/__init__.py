"""Differentially private skip-gram graph embeddings via adversarial training."""

__version__ = "0.1.0"
