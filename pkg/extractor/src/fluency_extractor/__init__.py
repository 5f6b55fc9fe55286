"""Offline extraction of frame embeddings (FEB1) and VAD timestamps."""

__version__ = "0.1.0"
