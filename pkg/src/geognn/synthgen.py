"""Synthetic branching transaction graphs with class-conditioned structure and features.

Each labeled seed grows its own rooted tree: at hop ``k`` every frontier node
gets a branching factor drawn from its class's range for that hop. Optional
cross links add non-tree edges inside a tree, and random edges join different
trees. Node magnitudes are log-normal around per-class log-means.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .container import atomic_write_text
from .graphstore import CLASS_INDEX, CLASSES, TransactionGraph

RAW_COLUMNS = ("total_sent", "total_received", "in_count", "out_count", "first_ts", "last_ts")
_LOG_FEATURES = ("total_sent", "total_received", "in_count", "out_count", "age")
_T0 = 1.3e9
_SPAN = 3.0e8


class SpecError(ValueError):
    pass


@dataclass
class ClassProfile:
    name: str
    seeds: int
    branching: list                    # per hop: [low, high] inclusive
    log_means: dict                    # keys from _LOG_FEATURES
    out_fraction: float = 0.5          # chance a tree edge points parent -> child
    cross_link: float = 0.0            # per node, chance of one extra in-tree edge
    noise: float = 1.0                 # log-normal sigma

    def validate(self, depth):
        if self.name not in CLASS_INDEX:
            raise SpecError(f"unknown class {self.name!r}")
        if self.seeds < 0:
            raise SpecError("seed counts must be non-negative")
        if len(self.branching) < depth:
            raise SpecError(f"{self.name}: need a branching range for each of {depth} hops")
        for lo, hi in self.branching:
            if lo < 1 or hi < lo:
                raise SpecError(f"{self.name}: branching ranges need 1 <= low <= high")
        for p in (self.out_fraction, self.cross_link):
            if not 0.0 <= p <= 1.0:
                raise SpecError(f"{self.name}: probabilities must lie in [0, 1]")
        if self.noise < 0:
            raise SpecError("noise must be non-negative")
        missing = set(_LOG_FEATURES) - set(self.log_means)
        if missing:
            raise SpecError(f"{self.name}: log_means missing {sorted(missing)}")


@dataclass
class SynthSpec:
    classes: list
    depth: int = 2
    inter_tree_rate: float = 0.02      # random inter-tree edges per node
    master_seed: int = 0
    extra: dict = field(default_factory=dict)

    def validate(self):
        if self.depth < 1:
            raise SpecError("depth must be >= 1")
        if not 0.0 <= self.inter_tree_rate <= 1.0:
            raise SpecError("inter_tree_rate must lie in [0, 1]")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise SpecError("duplicate class names")
        for c in self.classes:
            c.validate(self.depth)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        d["classes"] = [ClassProfile(**c) for c in d["classes"]]
        return cls(**d)


@dataclass
class SynthGraph:
    graph: TransactionGraph
    seeds: np.ndarray
    tree_of: np.ndarray


def _grow_tree(profile: ClassProfile, depth: int, rng: np.random.Generator):
    parent = [-1]
    hop = [0]
    frontier = [0]
    for k in range(depth):
        lo, hi = profile.branching[k]
        nxt = []
        for u in frontier:
            for _ in range(int(rng.integers(lo, hi + 1))):
                parent.append(u)
                hop.append(k + 1)
                nxt.append(len(parent) - 1)
        frontier = nxt
    m = len(parent)
    src, dst = [], []
    for v in range(1, m):
        if rng.random() < profile.out_fraction:
            src.append(parent[v]); dst.append(v)
        else:
            src.append(v); dst.append(parent[v])
    if profile.cross_link > 0 and m > 2:
        for v in range(m):
            if rng.random() < profile.cross_link:
                w = int(rng.integers(0, m - 1))
                w = w + 1 if w >= v else w
                src.append(v); dst.append(w)
    mu = profile.log_means
    s = profile.noise
    draw = {f: np.exp(mu[f] + s * rng.standard_normal(m)) for f in _LOG_FEATURES}
    feats = np.zeros((m, len(RAW_COLUMNS)))
    feats[:, 0] = draw["total_sent"]
    feats[:, 1] = draw["total_received"]
    feats[:, 2] = np.round(draw["in_count"])
    feats[:, 3] = np.round(draw["out_count"])
    first = _T0 + _SPAN * rng.random(m)
    feats[:, 4] = np.round(first)
    feats[:, 5] = np.round(first + draw["age"])
    return np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), feats


def generate(spec: SynthSpec) -> SynthGraph:
    """Build the graph; identical specs give identical graphs."""
    spec.validate()
    srcs, dsts, feats, tree_of, seeds, labels = [], [], [], [], [], []
    offset = 0
    tree_id = 0
    for profile in spec.classes:
        k = CLASS_INDEX[profile.name]
        for i in range(profile.seeds):
            rng = np.random.default_rng(np.random.SeedSequence([spec.master_seed, k, i]))
            s, d, f = _grow_tree(profile, spec.depth, rng)
            srcs.append(s + offset); dsts.append(d + offset); feats.append(f)
            tree_of.append(np.full(f.shape[0], tree_id))
            seeds.append(offset)
            labels.append(k)
            offset += f.shape[0]
            tree_id += 1
    n = offset
    src = np.concatenate(srcs) if srcs else np.zeros(0, np.int64)
    dst = np.concatenate(dsts) if dsts else np.zeros(0, np.int64)
    tree_of = np.concatenate(tree_of) if tree_of else np.zeros(0, np.int64)
    n_inter = int(round(spec.inter_tree_rate * n)) if tree_id > 1 else 0
    if n_inter:
        rng = np.random.default_rng(np.random.SeedSequence([spec.master_seed, 104729]))
        a = rng.integers(0, n, size=4 * n_inter)
        b = rng.integers(0, n, size=4 * n_inter)
        keep = tree_of[a] != tree_of[b]
        a, b = a[keep][:n_inter], b[keep][:n_inter]
        src = np.concatenate([src, a])
        dst = np.concatenate([dst, b])
    lab = np.full(n, -1, dtype=np.int64)
    lab[np.array(seeds, dtype=np.int64)] = labels
    graph = TransactionGraph(n, src, dst,
                             features=np.concatenate(feats) if feats else np.zeros((0, len(RAW_COLUMNS))),
                             feature_names=list(RAW_COLUMNS), labels=lab)
    return SynthGraph(graph, np.array(seeds, dtype=np.int64), tree_of)


def _fmt(v: float) -> str:
    if np.isnan(v):
        return ""
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def write_graph_files(graph: TransactionGraph, out_dir) -> dict[str, Path]:
    """Write edges.tsv, features.csv, labels.csv in the loader's formats."""
    out = Path(out_dir)
    paths = {"edges": out / "edges.tsv", "features": out / "features.csv", "labels": out / "labels.csv"}
    atomic_write_text(paths["edges"], "".join(f"{a}\t{b}\n" for a, b in zip(graph.src.tolist(), graph.dst.tolist())))
    names = graph.feature_names or []
    rows = ["node_id," + ",".join(names)]
    feats = graph.features if graph.features is not None else np.zeros((graph.n, 0))
    for i in range(graph.n):
        rows.append(",".join([str(i)] + [_fmt(v) for v in feats[i]]))
    atomic_write_text(paths["features"], "\n".join(rows) + "\n")
    lab = ["node_id,class"] + [f"{i},{CLASSES[k]}" for i, k in enumerate(graph.labels.tolist()) if k >= 0]
    atomic_write_text(paths["labels"], "\n".join(lab) + "\n")
    return paths


# -- presets ---------------------------------------------------------------

def _means(sent, recv, cin, cout, age):
    return {"total_sent": sent, "total_received": recv, "in_count": cin, "out_count": cout, "age": age}


def separable_spec(seeds_per_class: int = 30, master_seed: int = 0) -> SynthSpec:
    """Two classes, identical structure, disjoint feature levels, zero noise."""
    classes = [
        ClassProfile("EXCHANGE", seeds_per_class, [[2, 2], [2, 2]], _means(2.0, 2.0, 1.0, 1.0, 10.0), noise=0.0),
        ClassProfile("MINING", seeds_per_class, [[2, 2], [2, 2]], _means(9.0, 9.0, 4.0, 4.0, 15.0), noise=0.0),
    ]
    return SynthSpec(classes, depth=2, inter_tree_rate=0.0, master_seed=master_seed)


def branching_spec(seeds_per_class: int = 40, depth: int = 2, master_seed: int = 0,
                   noise: float = 1.5) -> SynthSpec:
    """Seven classes separated mainly by branching and edge direction, with overlapping features."""
    rows = [
        # name, branching per hop, out_fraction, cross_link, (sent, recv, in, out, age)
        ("EXCHANGE", [[6, 9], [1, 2]], 0.3, 0.05, (9.0, 9.2, 3.0, 3.0, 17.0)),
        ("MINING", [[1, 2], [5, 8]], 0.9, 0.0, (8.5, 8.0, 1.5, 3.0, 16.5)),
        ("GAMBLING", [[4, 6], [3, 4]], 0.5, 0.10, (8.0, 8.0, 2.5, 2.5, 16.0)),
        ("PONZI", [[2, 3], [2, 3]], 0.2, 0.0, (8.2, 8.6, 2.0, 1.5, 15.5)),
        ("INDIVIDUAL", [[1, 2], [1, 2]], 0.5, 0.0, (7.5, 7.5, 1.0, 1.0, 15.0)),
        ("RANSOMWARE", [[3, 5], [1, 1]], 0.1, 0.0, (8.0, 8.4, 1.5, 1.0, 14.5)),
        ("BET", [[5, 7], [5, 7]], 0.6, 0.05, (7.8, 7.6, 2.8, 2.8, 16.0)),
    ]
    classes = []
    for name, br, out_frac, cross, mu in rows:
        br = (br + [br[-1]] * depth)[:depth]
        classes.append(ClassProfile(name, seeds_per_class, br, _means(*mu), out_frac, cross, noise))
    return SynthSpec(classes, depth=depth, inter_tree_rate=0.02, master_seed=master_seed)


def tree_spec(seeds_per_class: int = 20, depth: int = 5, branching: int = 4, master_seed: int = 0,
              noise: float = 1.5) -> SynthSpec:
    """Seven classes of deep b-ary-ish trees that differ in direction pattern and features."""
    out_fracs = (0.1, 0.25, 0.4, 0.5, 0.6, 0.75, 0.9)
    classes = []
    for k, name in enumerate(CLASSES):
        shift = 0.25 * k
        classes.append(ClassProfile(name, seeds_per_class, [[branching, branching]] * depth,
                                    _means(8.0 + shift, 8.0 - shift, 2.0, 2.0, 15.0),
                                    out_fracs[k], 0.0, noise))
    return SynthSpec(classes, depth=depth, inter_tree_rate=0.0, master_seed=master_seed)


PRESETS = {"separable": separable_spec, "branching": branching_spec, "tree": tree_spec}
