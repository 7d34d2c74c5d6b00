"""Continual-learning lab for two-layer networks on XOR-cluster task streams."""

__version__ = "0.1.0"
