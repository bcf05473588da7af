"""Tape-recorded versions of the manifold maps used inside hyperbolic layers.

Same conventions and epsilons as :mod:`geognn.manifold`; every map that lands
on the ball is followed by projection onto the safe radius.
"""

from __future__ import annotations

import math

import numpy as np

from .. import diffcore as dc
from ..manifold import EPS_ATANH, EPS_ZERO, max_radius


def project(x, c):
    return dc.clip_norm(x, max_radius(c))


def exp0(v, c):
    sc = math.sqrt(c)
    n = dc.clamp(dc.row_norm(v), lo=EPS_ZERO)
    sn = dc.scale(n, sc)
    return project(dc.mul(dc.div(dc.tanh(sn), sn), v), c)


def log0(x, c):
    sc = math.sqrt(c)
    n = dc.clamp(dc.row_norm(x), lo=EPS_ZERO)
    sn = dc.scale(n, sc)
    return dc.mul(dc.div(dc.atanh_clamped(sn, EPS_ATANH), sn), x)


def _sqnorm(x):
    return dc.sum(dc.mul(x, x), axis=-1, keepdims=True)


def to_klein(x, c):
    return dc.div(dc.scale(x, 2.0), dc.add(dc.scale(_sqnorm(x), c), 1.0))


def from_klein(k, c):
    inner = dc.clamp(dc.sub(1.0, dc.scale(_sqnorm(k), c)), lo=1e-15)
    return dc.div(k, dc.add(dc.sqrt(inner), 1.0))


def klein_mean(x, c, src, dst, num_nodes, mode="unweighted"):
    """Klein-coordinate mean of ``x[src]`` grouped by ``dst``, returned on the ball."""
    k = to_klein(x, c)
    kk = dc.gather_rows(k, src)
    if mode == "unweighted":
        counts = np.bincount(dst, minlength=num_nodes).astype(np.float64)
        inv = (1.0 / np.maximum(counts, 1.0)).reshape((-1,) + (1,) * (x.ndim - 1))
        mean = dc.mul(dc.segment_sum(kk, dst, num_nodes), inv)
    elif mode == "lorentz_weighted":
        inner = dc.clamp(dc.sub(1.0, dc.scale(_sqnorm(kk), c)), lo=1e-15)
        gamma = dc.div(1.0, dc.sqrt(inner))
        num = dc.segment_sum(dc.mul(kk, gamma), dst, num_nodes)
        den = dc.segment_sum(gamma, dst, num_nodes)
        mean = dc.div(num, den)
    else:
        raise ValueError(f"unknown klein mean mode {mode!r}")
    return project(from_klein(mean, c), c)


def distance(x, y, c):
    """Poincaré distance between matching rows (last axis) of ``x`` and ``y``."""
    diff = dc.sub(x, y)
    num = dc.sum(dc.mul(diff, diff), axis=-1)
    den = dc.mul(dc.sub(1.0, dc.scale(dc.sum(dc.mul(x, x), axis=-1), c)),
                 dc.sub(1.0, dc.scale(dc.sum(dc.mul(y, y), axis=-1), c)))
    z = dc.add(dc.scale(dc.div(num, den), 2.0 * c), 1.0)
    return dc.scale(dc.arcosh_clamped(z), 1.0 / math.sqrt(c))
