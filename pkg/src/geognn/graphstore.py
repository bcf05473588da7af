"""Directed transaction graphs and fixed fan-out ego-subgraph sampling."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .container import read_container, write_container

log = logging.getLogger(__name__)

CLASSES = ("EXCHANGE", "MINING", "GAMBLING", "PONZI", "INDIVIDUAL", "RANSOMWARE", "BET")
CLASS_INDEX = {name: i for i, name in enumerate(CLASSES)}

DEPTH2 = {1: 5, 2: 10}
DEPTH3 = {1: 5, 2: 10, 3: 8}


class GraphLoadError(ValueError):
    """Ingestion failure; ``problems`` lists every offending line."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        shown = "; ".join(problems[:10])
        more = f" (+{len(problems) - 10} more)" if len(problems) > 10 else ""
        super().__init__(f"{len(problems)} ingestion problem(s): {shown}{more}")


def _csr(n, keys, values):
    order = np.lexsort((values, keys))
    keys, values = keys[order], values[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, keys + 1, 1)
    return np.cumsum(indptr), values


class TransactionGraph:
    """Immutable directed multigraph over nodes ``0..n-1``.

    ``neighbors(u)`` is the sorted set of distinct in- and out-neighbors
    (self excluded); ``out_edges(u)`` keeps parallel edges.
    """

    def __init__(self, n: int, src, dst, features=None, feature_names=None, labels=None):
        self.n = int(n)
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        if self.src.shape != self.dst.shape:
            raise ValueError("src and dst must have equal length")
        if self.src.size and (self.src.min() < 0 or self.dst.min() < 0
                              or self.src.max() >= self.n or self.dst.max() >= self.n):
            raise ValueError("edge endpoint outside [0, n)")
        self.features = None if features is None else np.asarray(features, dtype=np.float64)
        if self.features is not None and self.features.shape[0] != self.n:
            raise ValueError("feature matrix must have one row per node")
        self.feature_names = list(feature_names) if feature_names is not None else None
        if labels is None:
            labels = np.full(self.n, -1, dtype=np.int64)
        self.labels = np.asarray(labels, dtype=np.int64)
        if self.labels.shape != (self.n,) or np.any((self.labels < -1) | (self.labels >= len(CLASSES))):
            raise ValueError("labels must be -1 or a class index, one per node")

        self._out_ptr, self._out_idx = _csr(self.n, self.src, self.dst)
        self._in_ptr, self._in_idx = _csr(self.n, self.dst, self.src)
        keep = self.src != self.dst
        both_k = np.concatenate([self.src[keep], self.dst[keep]])
        both_v = np.concatenate([self.dst[keep], self.src[keep]])
        pairs = np.unique(np.stack([both_k, both_v], axis=1), axis=0) if both_k.size else np.zeros((0, 2), np.int64)
        self._nb_ptr, self._nb_idx = _csr(self.n, pairs[:, 0], pairs[:, 1])

    @property
    def num_edges(self) -> int:
        return int(self.src.size)

    def out_edges(self, u) -> np.ndarray:
        return self._out_idx[self._out_ptr[u]:self._out_ptr[u + 1]]

    def in_edges(self, u) -> np.ndarray:
        return self._in_idx[self._in_ptr[u]:self._in_ptr[u + 1]]

    def neighbors(self, u) -> np.ndarray:
        return self._nb_idx[self._nb_ptr[u]:self._nb_ptr[u + 1]]

    def out_degree(self) -> np.ndarray:
        return np.diff(self._out_ptr)

    def in_degree(self) -> np.ndarray:
        return np.diff(self._in_ptr)

    def labeled_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.labels >= 0)


# -- file loading ----------------------------------------------------------

def _parse_int(text, where, problems):
    try:
        return int(text)
    except ValueError:
        problems.append(f"{where}: not an integer node id {text!r}")
        return None


def read_edges(path, problems):
    src, dst = [], []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            where = f"{path}:{lineno}"
            if len(parts) != 2:
                problems.append(f"{where}: expected 'src<TAB>dst', got {line!r}")
                continue
            a, b = _parse_int(parts[0], where, problems), _parse_int(parts[1], where, problems)
            if a is None or b is None:
                continue
            if a < 0 or b < 0:
                problems.append(f"{where}: negative node id")
                continue
            src.append(a)
            dst.append(b)
    return src, dst


def read_features(path, problems):
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "node_id":
            problems.append(f"{path}:1: header must start with 'node_id'")
            return [], {}
        names = header[1:]
        for lineno, rec in enumerate(reader, 2):
            where = f"{path}:{lineno}"
            if not rec:
                continue
            if len(rec) != len(header):
                problems.append(f"{where}: expected {len(header)} fields, got {len(rec)}")
                continue
            nid = _parse_int(rec[0], where, problems)
            if nid is None:
                continue
            if nid in rows:
                problems.append(f"{where}: duplicate feature row for node {nid}")
                continue
            try:
                rows[nid] = [float(v) if v.strip() else math.nan for v in rec[1:]]
            except ValueError:
                problems.append(f"{where}: non-numeric feature value")
    return names, rows


def read_labels(path, problems):
    labels = {}
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), 1):
            where = f"{path}:{lineno}"
            if not rec:
                continue
            if lineno == 1 and rec[0] == "node_id":
                continue
            if len(rec) != 2:
                problems.append(f"{where}: expected 'node_id,class'")
                continue
            nid = _parse_int(rec[0], where, problems)
            name = rec[1].strip().upper()
            if name not in CLASS_INDEX:
                problems.append(f"{where}: unknown class {rec[1]!r}")
                continue
            if nid is None:
                continue
            if nid in labels:
                problems.append(f"{where}: duplicate label for node {nid}")
                continue
            labels[nid] = CLASS_INDEX[name]
    return labels


def load_graph(edge_file, feature_file=None, label_file=None) -> TransactionGraph:
    """Load and validate the three text files; raise GraphLoadError listing every offender.

    With a feature file, its rows define the node set and must cover
    ``0..n-1``; without one, ``n`` is one past the largest id seen.
    """
    problems: list[str] = []
    src, dst = read_edges(edge_file, problems)
    names, rows = (read_features(feature_file, problems) if feature_file else (None, None))
    labels = read_labels(label_file, problems) if label_file else {}

    if rows is not None:
        n = len(rows)
        missing = [i for i in range(n) if i not in rows]
        if missing:
            problems.append(f"{feature_file}: node ids must be contiguous from 0; missing {missing[:5]}")
        known = rows.keys()
    else:
        ids = src + dst + list(labels)
        n = max(ids) + 1 if ids else 0
        known = None
    if known is not None:
        for i, (a, b) in enumerate(zip(src, dst)):
            if a not in known or b not in known:
                problems.append(f"{edge_file}: edge {i + 1} ({a}->{b}) references unknown node")
        for nid in labels:
            if nid not in known:
                problems.append(f"{label_file}: label for unknown node {nid}")
    if problems:
        raise GraphLoadError(problems)

    feats = None
    if rows is not None:
        feats = np.array([rows[i] for i in range(n)], dtype=np.float64).reshape(n, len(names))
    lab = np.full(n, -1, dtype=np.int64)
    for nid, k in labels.items():
        lab[nid] = k
    return TransactionGraph(n, src, dst, features=feats, feature_names=names, labels=lab)


# -- ego subgraphs ---------------------------------------------------------

def check_fanout(spec) -> dict[int, int]:
    spec = {int(k): int(v) for k, v in dict(spec).items()}
    if sorted(spec) != list(range(1, len(spec) + 1)):
        raise ValueError(f"fan-out hops must be contiguous from 1, got {sorted(spec)}")
    if any(v < 1 for v in spec.values()):
        raise ValueError("fan-outs must be positive")
    return spec


def max_nodes(spec) -> int:
    spec = check_fanout(spec)
    total, width = 1, 1
    for k in sorted(spec):
        width *= spec[k]
        total += width
    return total


@dataclass
class EgoSubgraph:
    seed: int
    nodes: np.ndarray          # original ids, seed first
    hop: np.ndarray
    edges: np.ndarray          # (m, 2) local indices, original direction
    features: np.ndarray       # (len(nodes), f)
    label: int = -1
    extra: dict = field(default_factory=dict, repr=False)

    @property
    def num_nodes(self) -> int:
        return int(self.nodes.size)

    @property
    def seed_mask(self) -> np.ndarray:
        mask = np.zeros(self.num_nodes, dtype=bool)
        mask[0] = True
        return mask

    @cached_property
    def neighbor_pairs(self) -> np.ndarray:
        """Distinct undirected (src, dst) local pairs, both directions, no self pairs."""
        e = self.edges
        e = e[e[:, 0] != e[:, 1]]
        if not e.size:
            return np.zeros((0, 2), dtype=np.int64)
        both = np.concatenate([e, e[:, ::-1]])
        return np.unique(both, axis=0)

    def with_features(self, features) -> "EgoSubgraph":
        return EgoSubgraph(self.seed, self.nodes, self.hop, self.edges,
                           np.asarray(features, dtype=np.float64), self.label)


def seed_rng(master_seed: int, node_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(node_id)]))


def sample_ego(graph: TransactionGraph, seed: int, spec, rng: np.random.Generator) -> EgoSubgraph:
    spec = check_fanout(spec)
    if not 0 <= seed < graph.n:
        raise ValueError(f"seed {seed} not in graph")
    hop = {seed: 0}
    order = [seed]
    frontier = [seed]
    for k in sorted(spec):
        nxt = []
        for u in frontier:
            cand = [w for w in graph.neighbors(u).tolist() if w not in hop]
            if len(cand) > spec[k]:
                pick = rng.choice(len(cand), size=spec[k], replace=False)
                cand = [cand[i] for i in pick]
            for w in cand:
                hop[w] = k
                order.append(w)
                nxt.append(w)
        frontier = nxt
        if not frontier:
            break
    nodes = np.array(order, dtype=np.int64)
    local = {u: i for i, u in enumerate(order)}
    edges = []
    for u in order:
        for w in graph.out_edges(u).tolist():
            j = local.get(w)
            if j is not None:
                edges.append((local[u], j))
    edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
    if graph.features is not None:
        feats = graph.features[nodes]
    else:
        feats = np.zeros((nodes.size, 0))
    return EgoSubgraph(int(seed), nodes, np.array([hop[u] for u in order], dtype=np.int64),
                       edges, feats, int(graph.labels[seed]))


def _sample_chunk(args):
    graph, seeds, spec, master_seed = args
    return [sample_ego(graph, s, spec, seed_rng(master_seed, s)) for s in seeds]


def sample_all_seeds(graph, labeled_seeds, spec, master_seed: int, workers: int = 1) -> list[EgoSubgraph]:
    """One subgraph per seed, in input order; independent of ``workers``."""
    seeds = [int(s) for s in labeled_seeds]
    if workers <= 1 or len(seeds) < 2:
        return _sample_chunk((graph, seeds, spec, master_seed))
    chunks = [seeds[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_sample_chunk, [(graph, c, spec, master_seed) for c in chunks]))
    out = [None] * len(seeds)
    for w, part in enumerate(parts):
        for j, sub in enumerate(part):
            out[w + j * workers] = sub
    return out


# -- subgraph cache --------------------------------------------------------

def save_subgraphs(path, subgraphs: list[EgoSubgraph], meta: dict | None = None) -> None:
    sizes = np.array([s.num_nodes for s in subgraphs], dtype=np.int64)
    esizes = np.array([s.edges.shape[0] for s in subgraphs], dtype=np.int64)
    fdim = subgraphs[0].features.shape[1] if subgraphs else 0
    arrays = {
        "seeds": np.array([s.seed for s in subgraphs], dtype=np.int64),
        "labels": np.array([s.label for s in subgraphs], dtype=np.int64),
        "node_counts": sizes,
        "edge_counts": esizes,
        "nodes": np.concatenate([s.nodes for s in subgraphs]) if subgraphs else np.zeros(0, np.int64),
        "hops": np.concatenate([s.hop for s in subgraphs]) if subgraphs else np.zeros(0, np.int64),
        "edges": (np.concatenate([s.edges for s in subgraphs]) if subgraphs
                  else np.zeros((0, 2), np.int64)).astype(np.int64),
        "features": (np.concatenate([s.features for s in subgraphs]) if subgraphs
                     else np.zeros((0, fdim))).astype(np.float64),
    }
    write_container(path, "subgraphs", dict(meta or {}, count=len(subgraphs), feature_dim=int(fdim)), arrays)


def load_subgraphs(path) -> tuple[list[EgoSubgraph], dict]:
    meta, a = read_container(path, kind="subgraphs")
    out = []
    n0 = e0 = 0
    fdim = int(meta.get("feature_dim", 0))
    feats = a["features"].reshape(-1, fdim) if fdim else np.zeros((a["nodes"].size, 0))
    for i in range(a["seeds"].size):
        n1, e1 = n0 + int(a["node_counts"][i]), e0 + int(a["edge_counts"][i])
        out.append(EgoSubgraph(int(a["seeds"][i]), a["nodes"][n0:n1].copy(), a["hops"][n0:n1].copy(),
                               a["edges"][e0:e1].reshape(-1, 2).copy(), feats[n0:n1].copy(),
                               int(a["labels"][i])))
        n0, e0 = n1, e1
    return out, meta
