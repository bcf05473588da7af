import csv
import io
import math

import numpy as np
import pytest

from geognn import diffcore as dc
from geognn.graphstore import DEPTH2
from geognn.models import ModelConfig
from geognn.pipeline import prepare_dataset
from geognn.synthgen import generate, separable_spec
from geognn.trainer import (
    GRID_HEADER,
    METRICS_HEADER,
    NonFiniteGradient,
    TrainConfig,
    adam_step,
    cell_seed,
    evaluate,
    grid_search,
    metrics_from_predictions,
    metrics_rows,
    train_model,
    write_metrics_csv,
)


@pytest.fixture(scope="module")
def separable():
    return prepare_dataset(generate(separable_spec(seeds_per_class=10)).graph, DEPTH2)


def test_metrics_known_values():
    # class 0: TP 3, FP 1, FN 2
    y_true = [0, 0, 0, 0, 0, 1, 1]
    y_pred = [0, 0, 0, 1, 1, 0, 1]
    r = metrics_from_predictions(y_true, y_pred)
    assert r.precision[0] == pytest.approx(0.75)
    assert r.recall[0] == pytest.approx(0.6)
    assert r.f1[0] == pytest.approx(2 / 3)
    assert r.present.tolist() == [True, True] + [False] * 5
    assert r.macro_f1 == pytest.approx((2 / 3 + r.f1[1]) / 2)
    assert r.confusion.sum() == 7


def test_perfect_and_zero_division():
    r = metrics_from_predictions([2, 2, 5], [2, 2, 5])
    assert r.macro_f1 == 1.0
    r = metrics_from_predictions([1, 1], [3, 3])
    assert r.f1[1] == 0.0 and r.precision[3] == 0.0
    assert math.isnan(metrics_from_predictions([], []).macro_f1)


def test_adam_matches_closed_form():
    store = dc.ParamStore()
    p = store.add("w", np.array([1.0, -2.0]))
    g = np.array([0.5, -0.1])
    m = v = np.zeros(2)
    w = p.data.copy()
    for t in range(1, 4):
        p.grad = g * t
        adam_step(store, 0.01)
        gt = g * t
        m = 0.9 * m + 0.1 * gt
        v = 0.999 * v + 0.001 * gt * gt
        w = w - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(p.data, w, atol=1e-15)


def test_adam_refuses_non_finite():
    store = dc.ParamStore()
    p = store.add("bad", np.ones(2))
    p.grad = np.array([np.nan, 1.0])
    with pytest.raises(NonFiniteGradient) as err:
        adam_step(store, 0.1)
    assert err.value.param == "bad"
    assert np.array_equal(p.data, np.ones(2))


def test_training_learns_separable(separable):
    cfg = ModelConfig("sage", "euclidean", in_dim=separable.in_dim, hidden_dim=16, seed=1)
    res = train_model(cfg, TrainConfig(learning_rate=0.01, max_epochs=40, patience=10),
                      separable.oversampled_train(20), separable.validation)
    assert res.status == "ok"
    assert res.best_val_f1 == 1.0
    assert res.history[0]["loss"] > res.history[res.best_epoch - 1]["loss"]
    assert evaluate(res.model, separable.test).macro_f1 == 1.0


def test_early_stopping_and_determinism(separable):
    cfg = ModelConfig("gcn", "euclidean", in_dim=separable.in_dim, hidden_dim=8, seed=2)
    tc = TrainConfig(learning_rate=0.01, max_epochs=50, patience=3)
    a = train_model(cfg, tc, separable.oversampled_train(20), separable.validation)
    b = train_model(cfg, tc, separable.oversampled_train(20), separable.validation)
    assert a.epochs <= a.best_epoch + 3
    assert a.history == b.history
    for k, t in a.model.store.items():
        assert np.array_equal(t.data, b.model.store[k].data)


def test_divergence_is_recorded(separable):
    cfg = ModelConfig("gcn", "euclidean", in_dim=separable.in_dim, hidden_dim=8, seed=2)
    bad = [sg.with_features(np.full_like(sg.features, 1e300)) for sg in separable.train]
    for sg, orig in zip(bad, separable.train):
        sg.label = orig.label
    res = train_model(cfg, TrainConfig(learning_rate=1.0, max_epochs=5, patience=2), bad, separable.validation)
    assert res.status == "diverged"
    assert res.failure


def test_cell_seed_depends_only_on_coordinates():
    assert cell_seed(0, 0.5, 1e-3, 1) == cell_seed(0, 0.5, 1e-3, 1)
    seeds = {cell_seed(0, c, lr, s) for c in (None, 0.1, 0.5) for lr in (1e-4, 1e-3) for s in (0, 1)}
    assert len(seeds) == 12


def test_grid_worker_independent(separable):
    template = ModelConfig("gcn", "hyperbolic", in_dim=separable.in_dim, hidden_dim=8, curvature=1.0)
    tc = TrainConfig(max_epochs=4, patience=2, curvature_grid=(0.5, 1.0), lr_grid=(1e-3, 1e-2))
    train = separable.oversampled_train(10)
    a = grid_search(template, tc, train, separable.validation, separable.test, seeds=(0, 1), workers=1)
    b = grid_search(template, tc, train, separable.validation, separable.test, seeds=(0, 1), workers=2)
    assert a.to_csv() == b.to_csv() and a.runs_csv() == b.runs_csv()
    rows = list(csv.reader(io.StringIO(a.to_csv())))
    assert tuple(rows[0]) == GRID_HEADER and len(rows) == 5
    assert a.curvatures() == [0.5, 1.0] and a.lrs() == [1e-3, 1e-2]
    assert a.spread(0.5) == max(a.curve(0.5)) - min(a.curve(0.5))


def test_euclidean_grid_sweeps_lr_only(separable):
    template = ModelConfig("gcn", "euclidean", in_dim=separable.in_dim, hidden_dim=8)
    tc = TrainConfig(max_epochs=3, patience=2, lr_grid=(1e-3, 1e-2))
    res = grid_search(template, tc, separable.oversampled_train(10), separable.validation)
    assert [c.curvature for c in res.cells] == [None, None]


def test_metrics_csv_schema(tmp_path):
    r = metrics_from_predictions([0, 1, 1, 6], [0, 1, 0, 6])
    cfg = ModelConfig("gat", "hyperbolic", in_dim=3, hidden_dim=8, curvature=0.5)
    write_metrics_csv(tmp_path / "m.csv", metrics_rows(r, cfg, 2, 1e-3, 7, "test"))
    rows = list(csv.DictReader(open(tmp_path / "m.csv")))
    assert tuple(rows[0].keys()) == METRICS_HEADER
    assert [x["class"] for x in rows] == ["EXCHANGE", "MINING", "BET", "ALL"]
    assert float(rows[-1]["f1"]) == pytest.approx(r.macro_f1)
    assert rows[0]["curvature"] == "0.5" and rows[0]["subgraph_depth"] == "2"


def test_adam_zero_and_constant_gradient():
    store = dc.ParamStore()
    p = store.add("w", np.array([0.3, -0.7, 2.0]))
    p.grad = np.zeros(3)
    adam_step(store, 0.1)
    assert np.array_equal(p.data, [0.3, -0.7, 2.0])
    fresh = dc.ParamStore()
    q = fresh.add("w", np.zeros(3))
    q.grad = np.array([0.5, -3.0, 1e-3])
    adam_step(fresh, 0.01)
    assert np.allclose(q.data, -0.01 * np.sign(q.grad), rtol=1e-4)


def test_separable_loss_goes_small(separable):
    cfg = ModelConfig("gcn", "euclidean", in_dim=separable.in_dim, hidden_dim=16, seed=0)
    res = train_model(cfg, TrainConfig(learning_rate=0.01, max_epochs=200, patience=199), separable.oversampled_train(20),
                      separable.validation)
    assert min(h["loss"] for h in res.history) < 0.05


def test_evaluation_is_pure_and_untouched_by_oversampling(separable):
    from collections import Counter

    cfg = ModelConfig("sage", "hyperbolic", in_dim=separable.in_dim, hidden_dim=8, curvature=0.5)
    res = train_model(cfg, TrainConfig(max_epochs=3, patience=2), separable.oversampled_train(20),
                      separable.validation)
    a, b = evaluate(res.model, separable.test), evaluate(res.model, separable.test)
    assert np.array_equal(a.confusion, b.confusion)
    before = Counter(s.label for s in separable.validation)
    separable.oversampled_train(50)
    assert Counter(s.label for s in separable.validation) == before
    assert sum(before.values()) == len(separable.validation)
