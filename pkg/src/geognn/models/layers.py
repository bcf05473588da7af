"""Forward passes for the six architectures.

Each ``*_forward`` takes a :class:`GraphBatch`, the parameter store, the model
config, a training flag and a dropout rng, and returns per-node logits as a
tape tensor. Hidden layers apply ReLU then dropout; the last layer returns raw
logits (tangent-space logits for hyperbolic models). No layer has a bias.
"""

from __future__ import annotations

import numpy as np

from .. import diffcore as dc
from . import geometry as geo


def layer_dims(cfg):
    """(in, out, heads) per layer; GAT hidden layers use ``cfg.heads`` heads."""
    dims = []
    d_in = cfg.in_dim
    for k in range(cfg.layers):
        last = k == cfg.layers - 1
        d_out = cfg.classes if last else cfg.hidden_dim
        heads = 1 if (last or cfg.arch != "gat") else cfg.heads
        dims.append((d_in, d_out, heads))
        d_in = d_out
    return dims


def init_params(store: dc.ParamStore, cfg, rng: np.random.Generator) -> None:
    for k, (d_in, d_out, heads) in enumerate(layer_dims(cfg)):
        p = f"l{k}."
        if cfg.arch == "gcn":
            store.glorot(p + "W", d_in, d_out, rng)
        else:
            store.glorot(p + "W1", d_in, d_out, rng)
            store.glorot(p + "W2", d_in, d_out, rng)
        if cfg.arch == "gat" and cfg.geometry == "euclidean":
            hd = d_out // heads
            limit = np.sqrt(6.0 / (hd + 1))
            store.add(p + "a", rng.uniform(-limit, limit, size=(heads, hd)))


def _hidden(z, cfg, training, rng):
    return dc.dropout(dc.relu(z), cfg.dropout, training, rng)


# -- Euclidean -------------------------------------------------------------

def gcn_forward(batch, store, cfg, training=False, rng=None):
    h = dc.Tensor(batch.x)
    w = batch.gcn_weight[:, None]
    n = batch.num_nodes
    for k in range(cfg.layers):
        hw = dc.matmul(h, store[f"l{k}.W"])
        z = dc.segment_sum(dc.mul(dc.gather_rows(hw, batch.loop_src), w), batch.loop_dst, n)
        h = z if k == cfg.layers - 1 else _hidden(z, cfg, training, rng)
    return h


def sage_forward(batch, store, cfg, training=False, rng=None):
    h = dc.Tensor(batch.x)
    n = batch.num_nodes
    counts = np.bincount(batch.nbr_dst, minlength=n).astype(np.float64)
    inv = (1.0 / np.maximum(counts, 1.0))[:, None]
    for k in range(cfg.layers):
        agg = dc.mul(dc.segment_sum(dc.gather_rows(h, batch.nbr_src), batch.nbr_dst, n), inv)
        z = dc.add(dc.matmul(h, store[f"l{k}.W1"]), dc.matmul(agg, store[f"l{k}.W2"]))
        h = z if k == cfg.layers - 1 else _hidden(z, cfg, training, rng)
    return h


def gat_attention(batch, store, cfg, h, k):
    """Attention weights (E, heads) over ``loop_*`` edges and the (n, heads, hd) messages."""
    d_in, d_out, heads = layer_dims(cfg)[k]
    hd = d_out // heads
    n = batch.num_nodes
    z1 = dc.reshape(dc.matmul(h, store[f"l{k}.W1"]), (n, heads, hd))
    z2 = dc.reshape(dc.matmul(h, store[f"l{k}.W2"]), (n, heads, hd))
    a = store[f"l{k}.a"]
    s1 = dc.sum(dc.mul(z1, a), axis=-1)
    s2 = dc.sum(dc.mul(z2, a), axis=-1)
    e = dc.leaky_relu(dc.add(dc.gather_rows(s1, batch.loop_dst), dc.gather_rows(s2, batch.loop_src)), 0.2)
    alpha = dc.segment_softmax(e, batch.loop_dst, n)
    return alpha, z2


def gat_forward(batch, store, cfg, training=False, rng=None):
    h = dc.Tensor(batch.x)
    n = batch.num_nodes
    for k, (_, d_out, heads) in enumerate(layer_dims(cfg)):
        alpha, z2 = gat_attention(batch, store, cfg, h, k)
        msg = dc.mul(dc.gather_rows(z2, batch.loop_src), dc.reshape(alpha, alpha.shape + (1,)))
        z = dc.reshape(dc.segment_sum(msg, batch.loop_dst, n), (n, d_out))
        h = z if k == cfg.layers - 1 else _hidden(z, cfg, training, rng)
    return h


# -- hyperbolic (tangent space) --------------------------------------------

def _to_ball(z, cfg, training, rng):
    return geo.exp0(_hidden(z, cfg, training, rng), cfg.curvature)


def hgcn_forward(batch, store, cfg, training=False, rng=None):
    c = cfg.curvature
    n = batch.num_nodes
    h = geo.exp0(dc.Tensor(batch.x), c)
    for k in range(cfg.layers):
        agg = geo.klein_mean(h, c, batch.loop_src, batch.loop_dst, n, cfg.klein_mode)
        z = dc.matmul(geo.log0(agg, c), store[f"l{k}.W"])
        h = z if k == cfg.layers - 1 else _to_ball(z, cfg, training, rng)
    return h


def hsage_forward(batch, store, cfg, training=False, rng=None):
    c = cfg.curvature
    n = batch.num_nodes
    h = geo.exp0(dc.Tensor(batch.x), c)
    for k in range(cfg.layers):
        t = geo.log0(h, c)
        h1 = dc.matmul(t, store[f"l{k}.W1"])
        m = geo.exp0(dc.matmul(t, store[f"l{k}.W2"]), c)
        h2 = geo.log0(geo.klein_mean(m, c, batch.loop_src, batch.loop_dst, n, cfg.klein_mode), c)
        z = dc.add(h1, h2)
        h = z if k == cfg.layers - 1 else _to_ball(z, cfg, training, rng)
    return h


def hgat_attention(batch, store, cfg, h, k):
    """Attention weights (E, heads) from negative distances, plus tangent self/neighbor transforms."""
    c = cfg.curvature
    _, d_out, heads = layer_dims(cfg)[k]
    hd = d_out // heads
    n = batch.num_nodes
    t = geo.log0(h, c)
    z1 = dc.reshape(dc.matmul(t, store[f"l{k}.W1"]), (n, heads, hd))
    z2 = dc.reshape(dc.matmul(t, store[f"l{k}.W2"]), (n, heads, hd))
    p1 = geo.exp0(z1, c)
    p2 = geo.exp0(z2, c)
    d = geo.distance(dc.gather_rows(p1, batch.loop_dst), dc.gather_rows(p2, batch.loop_src), c)
    alpha = dc.segment_softmax(dc.scale(d, -1.0), batch.loop_dst, n)
    return alpha, z1, z2


def hgat_forward(batch, store, cfg, training=False, rng=None):
    c = cfg.curvature
    n = batch.num_nodes
    h = geo.exp0(dc.Tensor(batch.x), c)
    for k, (_, d_out, heads) in enumerate(layer_dims(cfg)):
        alpha, z1, z2 = hgat_attention(batch, store, cfg, h, k)
        msg = dc.mul(dc.gather_rows(z2, batch.loop_src), dc.reshape(alpha, alpha.shape + (1,)))
        agg = dc.segment_sum(msg, batch.loop_dst, n)
        z = dc.reshape(dc.add(z1, agg), (n, d_out))
        h = z if k == cfg.layers - 1 else _to_ball(z, cfg, training, rng)
    return h


FORWARDS = {
    ("gcn", "euclidean"): gcn_forward,
    ("sage", "euclidean"): sage_forward,
    ("gat", "euclidean"): gat_forward,
    ("gcn", "hyperbolic"): hgcn_forward,
    ("sage", "hyperbolic"): hsage_forward,
    ("gat", "hyperbolic"): hgat_forward,
}
