"""Graph -> split -> ego subgraphs -> normalized features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .featpipe import (
    NormalizationStats,
    build_feature_matrix,
    normalize_apply,
    normalize_fit,
    oversample_train,
    stratified_split,
)
from .graphstore import EgoSubgraph, TransactionGraph, sample_all_seeds


@dataclass
class Dataset:
    train: list[EgoSubgraph]
    validation: list[EgoSubgraph]
    test: list[EgoSubgraph]
    stats: NormalizationStats | None = None

    def split(self, name: str) -> list[EgoSubgraph]:
        return {"train": self.train, "validation": self.validation, "test": self.test}[name]

    @property
    def in_dim(self) -> int:
        return int(self.train[0].features.shape[1])

    def oversampled_train(self, target: int = 300, seed: int = 0) -> list[EgoSubgraph]:
        by_seed = {sg.seed: sg for sg in self.train}
        labels = {sg.seed: sg.label for sg in self.train}
        assignment = {s: "train" for s in by_seed}
        picks = oversample_train(assignment, labels, target,
                                 np.random.default_rng(np.random.SeedSequence([seed, 300])))
        return [by_seed[s] for s in picks]


def split_seeds(graph: TransactionGraph, split_seed: int) -> dict[str, list[int]]:
    labels = {int(s): int(graph.labels[s]) for s in graph.labeled_nodes()}
    assignment = stratified_split(labels, split_seed)
    out = {"train": [], "validation": [], "test": []}
    for node in sorted(assignment):
        out[assignment[node]].append(node)
    return out


def attach_features(subgraphs, matrix) -> list[EgoSubgraph]:
    return [sg.with_features(matrix[sg.nodes]) for sg in subgraphs]


def fit_stats(train_subgraphs, names, value_type) -> NormalizationStats:
    """Fit on the distinct nodes appearing in training subgraphs."""
    rows = {}
    for sg in train_subgraphs:
        for node, row in zip(sg.nodes.tolist(), sg.features):
            rows.setdefault(node, row)
    mat = np.array([rows[k] for k in sorted(rows)]) if rows else np.zeros((0, len(names)))
    return normalize_fit(mat, value_type, names)


def normalize_subgraphs(subgraphs, stats) -> list[EgoSubgraph]:
    return [sg.with_features(normalize_apply(sg.features, stats)) for sg in subgraphs]


def prepare_dataset(graph: TransactionGraph, fanout, split_seed: int = 0, sample_seed: int = 0,
                    rate_table=None, workers: int = 1) -> Dataset:
    names, matrix, value_type = build_feature_matrix(graph, rate_table)
    parts = split_seeds(graph, split_seed)
    raw = {k: attach_features(sample_all_seeds(graph, v, fanout, sample_seed, workers), matrix)
           for k, v in parts.items()}
    stats = fit_stats(raw["train"], names, value_type)
    return Dataset(*(normalize_subgraphs(raw[k], stats) for k in ("train", "validation", "test")), stats)
