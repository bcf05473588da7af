"""Euclidean and tangent-space hyperbolic GNNs for transaction-graph node classification."""

__version__ = "0.1.0"
