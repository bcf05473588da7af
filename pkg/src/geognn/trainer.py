"""Adam, training with early stopping, metrics, and the curvature x learning-rate grid."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import diffcore as dc
from .container import atomic_write_text
from .graphstore import CLASSES
from .manifold import CURVATURE_GRID
from .models import GNN, GraphBatch, ModelConfig

log = logging.getLogger(__name__)

METRICS_HEADER = ("arch", "geometry", "layers", "subgraph_depth", "curvature", "lr", "seed", "split",
                  "class", "precision", "recall", "f1", "macro_f1")
GRID_HEADER = ("curvature", "lr", "val_macro_f1", "test_macro_f1", "epochs", "status")
DEFAULT_LR_GRID = (1e-4, 3e-4, 1e-3, 3e-3)


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name):
        self.param = name
        super().__init__(f"non-finite gradient in parameter {name!r}")


class Divergence(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    lr_grid: tuple = DEFAULT_LR_GRID
    curvature_grid: tuple = CURVATURE_GRID
    max_epochs: int = 200
    patience: int = 20
    batch_size: int = 32
    seed: int = 0
    oversample_target: int = 300
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_batch_size: int = 256

    def __post_init__(self):
        if not self.lr_grid or not self.curvature_grid:
            raise ValueError("grids must be non-empty")
        if not 0 < self.patience < self.max_epochs:
            raise ValueError("need 0 < patience < max_epochs")
        if self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("batch_size and learning_rate must be positive")


# -- optimizer -------------------------------------------------------------

def adam_step(store: dc.ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update from the gradients held in ``store``."""
    for name, p in store.items():
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(name)
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.items():
        g = p.grad
        m = store.m[name]
        v = store.v[name]
        with np.errstate(over="ignore", invalid="ignore"):
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        # an overflowing second moment silently zeroes the step, so treat it as divergence
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(p.data))):
            raise Divergence(f"optimizer state for {name!r} overflowed")


# -- metrics ---------------------------------------------------------------

@dataclass
class MetricsReport:
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    present: np.ndarray

    @property
    def macro_precision(self) -> float:
        return float(self.precision[self.present].mean()) if self.present.any() else math.nan

    @property
    def macro_recall(self) -> float:
        return float(self.recall[self.present].mean()) if self.present.any() else math.nan

    @property
    def macro_f1(self) -> float:
        return float(self.f1[self.present].mean()) if self.present.any() else math.nan

    def rows(self, class_names=CLASSES):
        for k, name in enumerate(class_names):
            if self.present[k]:
                yield name, float(self.precision[k]), float(self.recall[k]), float(self.f1[k])
        yield "ALL", self.macro_precision, self.macro_recall, self.macro_f1


def metrics_from_predictions(y_true, y_pred, num_classes: int = len(CLASSES)) -> MetricsReport:
    """Per-class and macro metrics; classes with no true instances are excluded from macros."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    tp = np.diag(conf).astype(np.float64)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    present = conf.sum(axis=1) > 0
    absent = [CLASSES[k] if num_classes == len(CLASSES) else k for k in np.flatnonzero(~present)]
    if absent:
        log.debug("classes absent from evaluation set, excluded from macro averages: %s", absent)
    return MetricsReport(conf, precision, recall, f1, present)


def _batches(items, size):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def predict(model: GNN, subgraphs, batch_size: int = 256) -> np.ndarray:
    preds = []
    for chunk in _batches(subgraphs, batch_size):
        preds.append(np.argmax(model.predict_logits(GraphBatch.from_subgraphs(chunk)), axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, np.int64)


def evaluate(model: GNN, eval_set, batch_size: int = 256) -> MetricsReport:
    y_true = np.array([sg.label for sg in eval_set], dtype=np.int64)
    return metrics_from_predictions(y_true, predict(model, eval_set, batch_size), model.config.classes)


# -- training --------------------------------------------------------------

@dataclass
class TrainResult:
    model: GNN
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_f1: float = math.nan
    status: str = "ok"
    failure: str = ""

    @property
    def epochs(self) -> int:
        return len(self.history)


def _macro_or_zero(report):
    f = report.macro_f1
    return 0.0 if math.isnan(f) else f


def train_model(config: ModelConfig, tcfg: TrainConfig, train_set, val_set) -> TrainResult:
    """Mini-batch Adam with early stopping on validation macro-F1.

    ``train_set`` is used as given (oversample beforehand). A non-finite loss
    or gradient ends the run with status ``"diverged"``; the best parameters
    seen so far are kept.
    """
    model = GNN(config)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, config.seed, 1]))
    drop_rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, config.seed, 2]))
    result = TrainResult(model)
    best_params = model.store.state_arrays()
    best = -1.0
    since_best = 0
    for epoch in range(1, tcfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_set))
        losses = []
        try:
            for idx in _batches(order, tcfg.batch_size):
                batch = GraphBatch.from_subgraphs([train_set[i] for i in idx])
                model.store.zero_grad()
                with np.errstate(all="ignore"):
                    tape, loss = model.loss(batch, training=True, rng=drop_rng)
                    if not np.isfinite(loss.data):
                        raise Divergence(f"non-finite loss at epoch {epoch}")
                    dc.backward(tape, loss)
                adam_step(model.store, tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.adam_eps)
                losses.append(float(loss.data))
        except (Divergence, NonFiniteGradient) as exc:
            result.status = "diverged"
            result.failure = str(exc)
            log.warning("training diverged: %s", exc)
            break
        with np.errstate(all="ignore"):
            val_f1 = _macro_or_zero(evaluate(model, val_set, tcfg.eval_batch_size))
        result.history.append({"epoch": epoch, "loss": float(np.mean(losses)), "val_macro_f1": val_f1})
        if val_f1 > best:
            best, since_best = val_f1, 0
            best_params = model.store.state_arrays()
            result.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= tcfg.patience:
                break
    model.store.load_arrays(best_params)
    result.best_val_f1 = best if best >= 0 else math.nan
    return result


# -- grid search -----------------------------------------------------------

@dataclass
class GridCell:
    curvature: float | None
    lr: float
    seed: int
    val_macro_f1: float
    test_macro_f1: float
    epochs: int
    status: str
    failure: str = ""


@dataclass
class GridResult:
    cells: list

    def curvatures(self):
        return sorted({c.curvature for c in self.cells}, key=lambda v: -1 if v is None else v)

    def lrs(self):
        return sorted({c.lr for c in self.cells})

    def median(self, curvature, lr, key="val_macro_f1") -> float:
        vals = [getattr(c, key) for c in self.cells if c.curvature == curvature and c.lr == lr]
        vals = [0.0 if math.isnan(v) else v for v in vals]
        return float(np.median(vals)) if vals else math.nan

    def curve(self, curvature, key="val_macro_f1") -> list[float]:
        return [self.median(curvature, lr, key) for lr in self.lrs()]

    def spread(self, curvature, key="val_macro_f1") -> float:
        ys = self.curve(curvature, key)
        return max(ys) - min(ys)

    def best(self, curvature, key="val_macro_f1") -> float:
        return max(self.curve(curvature, key))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(GRID_HEADER)
        for c in self.curvatures():
            for lr in self.lrs():
                group = [x for x in self.cells if x.curvature == c and x.lr == lr]
                statuses = sorted({x.status for x in group})
                w.writerow(["" if c is None else _num(c), _num(lr),
                            _num(self.median(c, lr)), _num(self.median(c, lr, "test_macro_f1")),
                            int(np.median([x.epochs for x in group])), "+".join(statuses)])
        return buf.getvalue()

    def runs_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("curvature", "lr", "seed", "val_macro_f1", "test_macro_f1", "epochs", "status", "failure"))
        for x in sorted(self.cells, key=lambda x: (-1 if x.curvature is None else x.curvature, x.lr, x.seed)):
            w.writerow(["" if x.curvature is None else _num(x.curvature), _num(x.lr), x.seed,
                        _num(x.val_macro_f1), _num(x.test_macro_f1), x.epochs, x.status, x.failure])
        return buf.getvalue()


def _num(v) -> str:
    return repr(float(v))


def cell_seed(base_seed: int, curvature, lr: float, run_seed: int) -> int:
    """Per-cell seed from the cell's coordinates, so execution order never matters."""
    ck = 0 if curvature is None else int(round(curvature * 1e6))
    ss = np.random.SeedSequence([int(base_seed), ck, int(round(lr * 1e9)), int(run_seed)])
    return int(ss.generate_state(1)[0])


def run_cell(args) -> GridCell:
    template, tcfg, curvature, lr, run_seed, train_set, val_set, test_set = args
    seed = cell_seed(tcfg.seed, curvature, lr, run_seed)
    cfg = replace(template, curvature=curvature, seed=seed)
    tc = replace(tcfg, learning_rate=lr, seed=seed)
    res = train_model(cfg, tc, train_set, val_set)
    test_f1 = _macro_or_zero(evaluate(res.model, test_set, tcfg.eval_batch_size)) if test_set else math.nan
    val_f1 = 0.0 if math.isnan(res.best_val_f1) else res.best_val_f1
    return GridCell(curvature, lr, run_seed, val_f1, test_f1, res.epochs, res.status, res.failure)


def grid_search(template: ModelConfig, tcfg: TrainConfig, train_set, val_set, test_set=(),
                seeds=(0,), workers: int = 1) -> GridResult:
    """Train one model per (curvature, lr, seed); Euclidean templates sweep lr only."""
    curvatures = tcfg.curvature_grid if template.geometry == "hyperbolic" else (None,)
    jobs = [(template, tcfg, c, lr, s, train_set, val_set, list(test_set))
            for c in curvatures for lr in tcfg.lr_grid for s in seeds]
    if workers <= 1:
        cells = [run_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(run_cell, jobs))
    return GridResult(cells)


# -- metrics CSV -----------------------------------------------------------

def metrics_rows(report: MetricsReport, config: ModelConfig, subgraph_depth: int, lr: float,
                 seed: int, split: str) -> list[list]:
    curv = "" if config.curvature is None else _num(config.curvature)
    out = []
    for name, p, r, f in report.rows():
        out.append([config.arch, config.geometry, config.layers, subgraph_depth, curv, _num(lr), seed, split,
                    name, _num(p), _num(r), _num(f), _num(report.macro_f1)])
    return out


def write_metrics_csv(path, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    w.writerows(rows)
    atomic_write_text(path, buf.getvalue())
