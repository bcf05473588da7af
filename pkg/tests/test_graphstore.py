import numpy as np
import pytest

from geognn.graphstore import (
    DEPTH2,
    DEPTH3,
    EgoSubgraph,
    GraphLoadError,
    TransactionGraph,
    check_fanout,
    load_graph,
    load_subgraphs,
    max_nodes,
    sample_all_seeds,
    sample_ego,
    save_subgraphs,
    seed_rng,
)


def star(leaves=20):
    src = list(range(1, leaves + 1))
    return TransactionGraph(leaves + 1, src, [0] * leaves, labels=np.zeros(leaves + 1, int))


def random_graph(n=400, m=2400, seed=0):
    rng = np.random.default_rng(seed)
    src = rng.integers(0, n, m)
    dst = rng.integers(0, n, m)
    return TransactionGraph(n, src, dst, labels=np.zeros(n, int))


def test_star_center_fanout():
    g = star(20)
    sub = sample_ego(g, 0, DEPTH2, seed_rng(0, 0))
    assert sub.num_nodes == 6
    assert sub.edges.shape == (5, 2)
    assert sub.nodes[0] == 0
    assert list(sub.hop) == [0, 1, 1, 1, 1, 1]
    # induced edges keep their original direction: leaf -> center
    assert np.all(sub.edges[:, 1] == 0)


def test_leaf_reaches_other_leaves():
    g = star(20)
    sub = sample_ego(g, 3, DEPTH2, seed_rng(0, 3))
    assert sub.num_nodes == 1 + 1 + 10
    assert set(sub.hop.tolist()) == {0, 1, 2}


def test_isolated_seed():
    g = TransactionGraph(3, [1], [2], labels=np.array([4, -1, -1]))
    sub = sample_ego(g, 0, DEPTH2, seed_rng(1, 0))
    assert sub.num_nodes == 1 and sub.edges.shape == (0, 2) and sub.label == 4


@pytest.mark.parametrize("spec,bound", [(DEPTH2, 56), (DEPTH3, 456)])
def test_size_bounds(spec, bound):
    assert max_nodes(spec) == bound
    g = random_graph()
    subs = sample_all_seeds(g, range(60), spec, master_seed=3)
    assert max(s.num_nodes for s in subs) <= bound
    for s in subs:
        assert len(set(s.nodes.tolist())) == s.num_nodes


def test_induced_edges_are_complete():
    g = random_graph(200, 900)
    sub = sample_ego(g, 5, DEPTH2, seed_rng(0, 5))
    inside = set(sub.nodes.tolist())
    expected = sorted((u, v) for u, v in zip(g.src.tolist(), g.dst.tolist()) if u in inside and v in inside)
    got = sorted((int(sub.nodes[a]), int(sub.nodes[b])) for a, b in sub.edges)
    assert got == expected


def test_parallel_edges_kept_but_pairs_unique():
    g = TransactionGraph(3, [0, 0, 1, 2], [1, 1, 0, 0], labels=np.zeros(3, int))
    sub = sample_ego(g, 0, DEPTH2, seed_rng(0, 0))
    assert sub.edges.shape[0] == 4
    pairs = {tuple(p) for p in sub.neighbor_pairs.tolist()}
    assert len(pairs) == sub.neighbor_pairs.shape[0] == 4


def test_sampling_deterministic_and_worker_independent():
    g = random_graph()
    a = sample_all_seeds(g, range(40), DEPTH2, 7, workers=1)
    b = sample_all_seeds(g, range(40), DEPTH2, 7, workers=3)
    c = sample_all_seeds(g, range(40), DEPTH2, 8, workers=1)
    assert all(np.array_equal(x.nodes, y.nodes) and np.array_equal(x.edges, y.edges) for x, y in zip(a, b))
    assert any(not np.array_equal(x.nodes, y.nodes) for x, y in zip(a, c))


def test_bad_fanout():
    with pytest.raises(ValueError):
        check_fanout({1: 5, 3: 8})
    with pytest.raises(ValueError):
        check_fanout({1: 0})
    assert check_fanout({"1": 5, "2": 10}) == DEPTH2


def test_cache_round_trip(tmp_path):
    g = random_graph()
    subs = [s.with_features(np.random.default_rng(s.seed).normal(size=(s.num_nodes, 3)))
            for s in sample_all_seeds(g, range(10), DEPTH2, 0)]
    for s, k in zip(subs, range(10)):
        s.label = k % 7
    save_subgraphs(tmp_path / "c.bin", subs, {"split": "train"})
    back, meta = load_subgraphs(tmp_path / "c.bin")
    assert meta["split"] == "train" and meta["count"] == 10
    for x, y in zip(subs, back):
        assert x.seed == y.seed and x.label == y.label
        assert np.array_equal(x.nodes, y.nodes) and np.array_equal(x.edges, y.edges)
        assert np.array_equal(x.features, y.features) and np.array_equal(x.hop, y.hop)
    first = (tmp_path / "c.bin").read_bytes()
    save_subgraphs(tmp_path / "c.bin", back, {"split": "train"})
    assert (tmp_path / "c.bin").read_bytes() == first


def _write(tmp_path, edges, feats, labels):
    (tmp_path / "e.tsv").write_text(edges)
    (tmp_path / "f.csv").write_text(feats)
    (tmp_path / "l.csv").write_text(labels)
    return tmp_path / "e.tsv", tmp_path / "f.csv", tmp_path / "l.csv"


def test_load_graph_ok(tmp_path):
    paths = _write(tmp_path, "0\t1\n1\t2\n", "node_id,a,b\n0,1,2\n1,3,4\n2,5,6\n", "node_id,class\n1,ponzi\n")
    g = load_graph(*paths)
    assert g.n == 3 and g.num_edges == 2
    assert g.labels.tolist() == [-1, 3, -1]
    assert g.features[2].tolist() == [5.0, 6.0]
    assert sorted(g.neighbors(1).tolist()) == [0, 2]


def test_load_graph_lists_every_problem(tmp_path):
    paths = _write(tmp_path, "0\t1\n0 1\n0\t9\n", "node_id,a\n0,1\n1,x\n", "0,ALIEN\n1,BET\n")
    with pytest.raises(GraphLoadError) as err:
        load_graph(*paths)
    text = "\n".join(err.value.problems)
    assert "e.tsv:2" in text
    assert "unknown node" in text
    assert "f.csv:3" in text
    assert "l.csv:1" in text and "ALIEN" in text


def test_egosubgraph_seed_mask():
    s = EgoSubgraph(5, np.array([5, 1, 2]), np.array([0, 1, 1]), np.zeros((0, 2), int), np.zeros((3, 1)))
    assert s.seed_mask.tolist() == [True, False, False]
