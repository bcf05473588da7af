"""Feature construction, log-quantile normalization, stratified splits, oversampling.

Normalization runs five stages per entry: zeros (and negatives) become
missing, log transform, affine map onto [lower anchor, 95th percentile],
clip to [0, 1], missing becomes 0. Anchors come from the training split only.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from .container import atomic_write_text

log = logging.getLogger(__name__)

STATS_FORMAT = "geognn-normstats"
STATS_VERSION = 1

RAW_VALUE_COLUMNS = ("total_sent", "total_received")
TIME_COLUMNS = ("first_ts", "last_ts")
DERIVED_COLUMNS = ("avg_sent", "avg_received", "in_ratio", "out_ratio",
                   "cluster_ratio", "node_age", "activity_rate")
VALUE_COLUMNS = RAW_VALUE_COLUMNS + ("avg_sent", "avg_received")

SPLITS = ("train", "validation", "test")
SPLIT_FRACTIONS = (0.4, 0.3, 0.3)


class PipelineError(ValueError):
    pass


# -- derived features ------------------------------------------------------

def _col(graph, name):
    names = graph.feature_names or []
    if graph.features is None or name not in names:
        return np.full(graph.n, np.nan)
    return graph.features[:, names.index(name)]


def derive_features(graph, node=None) -> np.ndarray:
    """Derived features for one node (1-d) or every node (2-d, ``node=None``).

    Columns follow ``DERIVED_COLUMNS``. Missing raw inputs give NaN.
    """
    in_deg = graph.in_degree().astype(np.float64)
    out_deg = graph.out_degree().astype(np.float64)
    total_sent, total_recv = _col(graph, "total_sent"), _col(graph, "total_received")
    in_count, out_count = _col(graph, "in_count"), _col(graph, "out_count")
    first, last = _col(graph, "first_ts"), _col(graph, "last_ts")
    with np.errstate(invalid="ignore"):
        age = last - first
        cols = [
            total_sent / np.maximum(1.0, out_count),
            total_recv / np.maximum(1.0, in_count),
            in_deg / (in_deg + out_deg + 1.0),
            out_deg / (in_deg + out_deg + 1.0),
            np.zeros(graph.n),
            age,
            (in_count + out_count) / np.maximum(1.0, age),
        ]
    out = np.stack(cols, axis=1)
    return out if node is None else out[node]


def load_rate_table(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``date,usd_per_btc`` rows; returns (unix seconds, rates) sorted by date."""
    ts, rates = [], []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), 1):
            if not rec or (lineno == 1 and rec[0] == "date"):
                continue
            try:
                day = _dt.date.fromisoformat(rec[0].strip())
                rate = float(rec[1])
            except (ValueError, IndexError) as exc:
                raise PipelineError(f"{path}:{lineno}: bad rate row {rec!r}") from exc
            ts.append(_dt.datetime(day.year, day.month, day.day, tzinfo=_dt.timezone.utc).timestamp())
            rates.append(rate)
    order = np.argsort(ts, kind="stable")
    return np.asarray(ts)[order], np.asarray(rates)[order]


def lifetime_median_rate(first_ts, last_ts, table) -> float:
    ts, rates = table
    if not ts.size:
        return math.nan
    if not (math.isfinite(first_ts) and math.isfinite(last_ts)):
        return math.nan
    sel = (ts >= first_ts) & (ts <= last_ts)
    if np.any(sel):
        return float(np.median(rates[sel]))
    mid = 0.5 * (first_ts + last_ts)
    return float(rates[np.argmin(np.abs(ts - mid))])


def build_feature_matrix(graph, rate_table=None) -> tuple[list[str], np.ndarray, list[bool]]:
    """Raw columns (timestamps dropped) followed by derived columns.

    Returns ``(names, matrix, value_type)``. With a rate table, value-type
    columns are converted at each node's lifetime median rate.
    """
    raw_names = [n for n in (graph.feature_names or []) if n not in TIME_COLUMNS]
    raw = np.stack([_col(graph, n) for n in raw_names], axis=1) if raw_names else np.zeros((graph.n, 0))
    names = raw_names + list(DERIVED_COLUMNS)
    mat = np.concatenate([raw, derive_features(graph)], axis=1)
    value_type = [n in VALUE_COLUMNS for n in names]
    if rate_table is not None:
        first, last = _col(graph, "first_ts"), _col(graph, "last_ts")
        rate = np.array([lifetime_median_rate(a, b, rate_table) for a, b in zip(first, last)])
        mat[:, value_type] *= rate[:, None]
    return names, mat, value_type


# -- normalization ---------------------------------------------------------

@dataclass(frozen=True)
class FeatureStats:
    name: str
    q0: float
    q5: float
    q95: float
    value_type: bool
    constant: bool

    @property
    def lower(self) -> float:
        if self.value_type and self.q5 != self.q0:
            return self.q5
        return self.q0


@dataclass(frozen=True)
class NormalizationStats:
    features: tuple[FeatureStats, ...]

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def to_json(self) -> str:
        doc = {"format": STATS_FORMAT, "version": STATS_VERSION,
               "features": [asdict(f) for f in self.features]}
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "NormalizationStats":
        doc = json.loads(text)
        if doc.get("format") != STATS_FORMAT or doc.get("version") != STATS_VERSION:
            raise PipelineError("not a supported normalization stats file")
        return cls(tuple(FeatureStats(**f) for f in doc["features"]))

    def save(self, path) -> None:
        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path) -> "NormalizationStats":
        with open(path) as fh:
            return cls.from_json(fh.read())


def _positive(col):
    with np.errstate(invalid="ignore"):
        return col[np.isfinite(col) & (col > 0)]


def normalize_fit(train_features, value_type=None, names=None) -> NormalizationStats:
    """Fit per-feature log-domain anchors on training rows (NaN allowed)."""
    x = np.asarray(train_features, dtype=np.float64)
    if x.ndim != 2:
        raise PipelineError("train_features must be 2-d")
    m = x.shape[1]
    value_type = [False] * m if value_type is None else list(value_type)
    names = [f"f{i + 1}" for i in range(m)] if names is None else list(names)
    if len(value_type) != m or len(names) != m:
        raise PipelineError("value_type/names length must match feature count")
    out = []
    for j in range(m):
        pos = _positive(x[:, j])
        if not pos.size:
            out.append(FeatureStats(names[j], 0.0, 0.0, 0.0, bool(value_type[j]), True))
            continue
        lx = np.log(pos)
        q0, q5, q95 = float(lx.min()), *(float(q) for q in np.percentile(lx, [5, 95], method="linear"))
        fs = FeatureStats(names[j], q0, q5, q95, bool(value_type[j]), False)
        if not fs.q95 > fs.lower:
            fs = FeatureStats(names[j], q0, q5, q95, bool(value_type[j]), True)
        out.append(fs)
    return NormalizationStats(tuple(out))


def normalize_apply(features, stats: NormalizationStats) -> np.ndarray:
    x = np.array(features, dtype=np.float64, copy=True)
    if x.ndim != 2 or x.shape[1] != len(stats.features):
        raise PipelineError(f"expected {len(stats.features)} feature columns, got shape {x.shape}")
    neg = int(np.sum(x < 0))
    if neg:
        log.warning("normalize_apply: %d negative entries treated as missing", neg)
    with np.errstate(invalid="ignore", divide="ignore"):
        x[~(x > 0)] = np.nan                          # zeros, negatives, NaN
        lx = np.log(x)
        out = np.zeros_like(x)
        for j, fs in enumerate(stats.features):
            if fs.constant:
                continue
            out[:, j] = (lx[:, j] - fs.lower) / (fs.q95 - fs.lower)
        out = np.clip(out, 0.0, 1.0)
    out[np.isnan(out)] = 0.0
    return out


# -- splitting and oversampling --------------------------------------------

def largest_remainder(total: int, fractions=SPLIT_FRACTIONS) -> list[int]:
    quotas = [total * f for f in fractions]
    counts = [int(math.floor(q)) for q in quotas]
    short = total - sum(counts)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def stratified_split(labels: dict[int, int], split_seed: int) -> dict[int, str]:
    """Map each labeled seed to train/validation/test, 40/30/30 per class."""
    by_class: dict[int, list[int]] = {}
    for node, k in labels.items():
        by_class.setdefault(int(k), []).append(int(node))
    assignment = {}
    for k in sorted(by_class):
        members = sorted(by_class[k])
        if len(members) < 3:
            log.warning("class %d has %d member(s); all assigned to train", k, len(members))
            assignment.update({m: "train" for m in members})
            continue
        rng = np.random.default_rng(np.random.SeedSequence([int(split_seed), k]))
        members = [members[i] for i in rng.permutation(len(members))]
        start = 0
        for split, count in zip(SPLITS, largest_remainder(len(members))):
            assignment.update({m: split for m in members[start:start + count]})
            start += count
    return assignment


def oversample_train(assignment: dict[int, str], labels: dict[int, int], target: int = 300,
                     rng: np.random.Generator | None = None) -> list[int]:
    """Training multiset in which every class below ``target`` has exactly ``target`` entries.

    Originals are kept once each and topped up with draws with replacement;
    classes already at or above ``target`` are left as they are.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    by_class: dict[int, list[int]] = {}
    present = set()
    for node, split in assignment.items():
        present.add(labels[node])
        if split == "train":
            by_class.setdefault(labels[node], []).append(node)
    out = []
    for k in sorted(present):
        members = sorted(by_class.get(k, []))
        if not members:
            raise PipelineError(f"class {k} has no training seeds to oversample from")
        out.extend(members)
        if len(members) < target:
            extra = rng.integers(0, len(members), size=target - len(members))
            out.extend(members[i] for i in extra)
    return out


def class_counts(seeds, labels) -> Counter:
    return Counter(labels[s] for s in seeds)
