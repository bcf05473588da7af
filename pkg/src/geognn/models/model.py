from __future__ import annotations

import numpy as np

from .. import diffcore as dc
from ..container import read_container, write_container
from .batch import GraphBatch
from .config import ModelConfig
from .layers import FORWARDS, init_params


class LossError(ValueError):
    pass


def seed_masked_loss(logits, labels, seed_rows) -> dc.Tensor:
    """Mean cross-entropy over the seed row of each subgraph; other rows are ignored."""
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(labels < 0):
        raise LossError("a seed in the batch has no label")
    return dc.softmax_cross_entropy(dc.gather_rows(logits, seed_rows), labels)


class GNN:
    """A configured layer stack bound to its parameters."""

    def __init__(self, config: ModelConfig, store: dc.ParamStore | None = None):
        self.config = config
        if store is None:
            store = dc.ParamStore()
            init_params(store, config, np.random.default_rng(np.random.SeedSequence([config.seed, 7919])))
        self.store = store
        self._forward = FORWARDS[(config.arch, config.geometry)]

    def forward(self, batch, training: bool = False, rng: np.random.Generator | None = None) -> dc.Tensor:
        if not isinstance(batch, GraphBatch):
            batch = GraphBatch.from_subgraphs(batch if isinstance(batch, list) else [batch])
        return self._forward(batch, self.store, self.config, training, rng)

    def loss(self, batch: GraphBatch, training: bool = False, rng=None) -> tuple[dc.Tape, dc.Tensor]:
        with dc.Tape() as tape:
            logits = self.forward(batch, training, rng)
            loss = seed_masked_loss(logits, batch.labels, batch.seed_rows)
        return tape, loss

    def predict_logits(self, batch: GraphBatch) -> np.ndarray:
        """Seed-row logits with dropout disabled and nothing recorded."""
        return self.forward(batch, training=False).data[batch.seed_rows]

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"config": self.config.to_dict()}
        if extra_meta:
            meta["extra"] = extra_meta
        write_container(path, "checkpoint", meta, self.store.state_arrays())

    @classmethod
    def load(cls, path) -> "GNN":
        meta, arrays = read_container(path, kind="checkpoint")
        model = cls(ModelConfig.from_dict(meta["config"]))
        model.store.load_arrays(arrays)
        return model
