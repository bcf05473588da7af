from .batch import GraphBatch
from .config import ARCHITECTURES, GEOMETRIES, ConfigError, ModelConfig
from .layers import (
    gat_forward,
    gcn_forward,
    hgat_forward,
    hgcn_forward,
    hsage_forward,
    layer_dims,
    sage_forward,
)
from .model import GNN, LossError, seed_masked_loss

__all__ = [
    "ARCHITECTURES", "GEOMETRIES", "ConfigError", "GNN", "GraphBatch", "LossError", "ModelConfig",
    "gat_forward", "gcn_forward", "hgat_forward", "hgcn_forward", "hsage_forward", "layer_dims",
    "sage_forward", "seed_masked_loss",
]
