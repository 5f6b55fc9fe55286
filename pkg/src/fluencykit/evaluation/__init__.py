"""Datasets, metrics and experiment runners."""
