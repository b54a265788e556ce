"""Desk-scale unsupervised ReID pre-training with intra-identity regularization."""

__version__ = "0.1.0"
