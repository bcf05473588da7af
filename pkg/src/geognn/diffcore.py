"""Tape-based reverse-mode differentiation over dense float64 arrays.

Operations executed inside ``with Tape() as tape:`` are recorded whenever at
least one operand requires a gradient. ``backward(tape, loss)`` walks the
record in reverse and accumulates into the ``.grad`` of every leaf tensor
that requires one (normally the parameters of a :class:`ParamStore`).

Only the operations the GNN layers need are provided. Segment operations
take an integer id per row and a segment count, which is how edge lists are
reduced onto nodes.
"""

from __future__ import annotations

import contextvars
import math

import numpy as np

_ACTIVE_TAPE: contextvars.ContextVar = contextvars.ContextVar("geognn_tape", default=None)


class DiffError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_recorded")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name
        self._recorded = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of (output, inputs, vjp) triples."""

    def __init__(self):
        self.nodes: list = []
        self._token = None

    def __enter__(self):
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self.nodes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(out_data, inputs, vjp) -> Tensor:
    out = Tensor(out_data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._recorded = True
        tape.nodes.append((out, inputs, vjp))
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise arithmetic ------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def vjp(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _emit(out, (a, b), vjp)


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    return _emit(a.data * s, (a,), lambda g: (g * s,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DiffError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _emit(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


# -- nonlinearities --------------------------------------------------------

def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return _emit(a.data * factor, (a,), lambda g: (g * factor,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),))


def atanh_clamped(a, eps: float = 1e-7) -> Tensor:
    """atanh with the argument clamped to [-(1-eps), 1-eps]; zero gradient where clamped."""
    a = as_tensor(a)
    lim = 1.0 - eps
    inside = np.abs(a.data) <= lim
    x = np.clip(a.data, -lim, lim)
    return _emit(np.arctanh(x), (a,), lambda g: (np.where(inside, g / (1.0 - x * x), 0.0),))


def arcosh_clamped(a, eps: float = 1e-15) -> Tensor:
    """arcosh with the argument clamped to >= 1 + eps."""
    a = as_tensor(a)
    inside = a.data >= 1.0 + eps
    x = np.maximum(a.data, 1.0 + eps)
    return _emit(np.arccosh(x), (a,), lambda g: (np.where(inside, g / np.sqrt(x * x - 1.0), 0.0),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _emit(out, (a,), lambda g: (g / (2.0 * np.where(out > 0, out, np.inf)),))


def clamp(a, lo=None, hi=None) -> Tensor:
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = out == a.data
    return _emit(out, (a,), lambda g: (g * inside,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _emit(np.log(a.data), (a,), lambda g: (g / a.data,))


# -- reductions and reshaping ----------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit(out, (a,), vjp)


def mean(a) -> Tensor:
    a = as_tensor(a)
    return scale(sum(a), 1.0 / a.data.size)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def row_norm(a, eps: float = 1e-12) -> Tensor:
    """Euclidean norm over the last axis (keepdims); zero gradient where norm < eps."""
    a = as_tensor(a)
    n = np.sqrt(np.sum(a.data * a.data, axis=-1, keepdims=True))
    safe = n >= eps
    unit = np.where(safe, a.data / np.where(safe, n, 1.0), 0.0)
    return _emit(n, (a,), lambda g: (g * unit,))


def clip_norm(a, max_norm: float) -> Tensor:
    """Rescale rows (last axis) whose norm is >= max_norm down to max_norm."""
    a = as_tensor(a)
    n = np.sqrt(np.sum(a.data * a.data, axis=-1, keepdims=True))
    over = n >= max_norm
    if not np.any(over):
        return _emit(a.data.copy(), (a,), lambda g: (g,))
    nsafe = np.where(over, n, 1.0)
    s = np.where(over, max_norm / nsafe, 1.0)
    unit = a.data / nsafe

    def vjp(g):
        radial = np.sum(unit * g, axis=-1, keepdims=True)
        return (np.where(over, s * (g - unit * radial), g),)

    return _emit(a.data * s, (a,), vjp)


def concat_cols(tensors) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[-1] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _emit(np.concatenate([t.data for t in tensors], axis=-1), tuple(tensors),
                 lambda g: tuple(np.split(g, cuts, axis=-1)))


def gather_rows(a, idx) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)

    return _emit(a.data[idx], (a,), lambda g: (_segment_sum_np(g, idx, a.shape[0]),))


# -- segment operations ----------------------------------------------------

def _segment_sum_np(values, seg, num_segments):
    tail = values.shape[1:]
    width = int(np.prod(tail)) if tail else 1
    flat = (seg[:, None] * width + np.arange(width)).ravel()
    out = np.bincount(flat, weights=values.reshape(-1), minlength=num_segments * width)
    return out.reshape((num_segments,) + tail)


def segment_sum(values, segment_ids, num_segments: int) -> Tensor:
    values = as_tensor(values)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape[0] != values.shape[0]:
        raise DiffError("segment_ids must have one entry per row")
    return _emit(_segment_sum_np(values.data, seg, num_segments), (values,),
                 lambda g: (g[seg],))


def segment_softmax(scores, segment_ids, num_segments: int) -> Tensor:
    """Softmax of ``scores`` (shape ``(E,)`` or ``(E, H)``) within each segment."""
    scores = as_tensor(scores)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape[0] != scores.shape[0]:
        raise DiffError("segment_ids must have one entry per row")
    smax = np.full((num_segments,) + scores.shape[1:], -np.inf)
    np.maximum.at(smax, seg, scores.data)
    e = np.exp(scores.data - smax[seg])
    denom = _segment_sum_np(e, seg, num_segments)
    out = e / denom[seg]

    def vjp(g):
        inner = _segment_sum_np(g * out, seg, num_segments)
        return (out * (g - inner[seg]),)

    return _emit(out, (scores,), vjp)


# -- stochastic and loss ops -----------------------------------------------

def dropout(a, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; the identity when not training or rate == 0."""
    a = as_tensor(a)
    if not training or rate <= 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise DiffError(f"dropout rate must be in [0, 1), got {rate}")
    if rng is None:
        raise DiffError("dropout in training mode needs an rng")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _emit(a.data * mask, (a,), lambda g: (g * mask,))


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of rows of ``logits`` against integer ``labels``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DiffError("softmax_cross_entropy needs (m, k) logits and m labels")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    m = logits.shape[0]
    loss = -logp[np.arange(m), labels].mean()

    def vjp(g):
        p = np.exp(logp)
        p[np.arange(m), labels] -= 1.0
        return (g * p / m,)

    return _emit(np.asarray(loss), (logits,), vjp)


# -- backward pass ---------------------------------------------------------

def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.data.size != 1:
        raise DiffError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for out, inputs, vjp in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, vjp(g)):
            if not t.requires_grad or gi is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if not t._recorded:
                leaves[key] = t
    for key, t in leaves.items():
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += np.reshape(grads[key], t.shape)


# -- parameters ------------------------------------------------------------

class ParamStore:
    """Named parameters with gradient accumulators and Adam moment buffers."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise DiffError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def glorot(self, name: str, fan_in: int, fan_out: int, rng: np.random.Generator) -> Tensor:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, rng.uniform(-limit, limit, size=(fan_in, fan_out)))

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = np.zeros_like(t.data)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(arrays)
        if missing:
            raise DiffError(f"parameter names differ: {sorted(missing)}")
        for k, t in self.params.items():
            if arrays[k].shape != t.shape:
                raise DiffError(f"shape mismatch for {k}: {arrays[k].shape} vs {t.shape}")
            t.data = np.array(arrays[k], dtype=np.float64)


def grad_check(forward, store: ParamStore, epsilon: float = 1e-5, max_coords: int = 200,
               seed: int = 0, floor: float = 1e-4) -> float:
    """Max relative error between tape gradients and central finite differences.

    ``forward`` is a zero-argument callable that runs the model inside its own
    tape and returns ``(tape, loss)``; it must be deterministic. Each error is
    ``|fd - ad| / max(|fd|, |ad|, floor)``; at most ``max_coords`` coordinates
    per parameter are checked.
    """
    rng = np.random.default_rng(seed)
    store.zero_grad()
    tape, loss = forward()
    backward(tape, loss)
    worst = 0.0
    for name, p in store.items():
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = float(forward()[1].data)
            flat[i] = orig - epsilon
            fm = float(forward()[1].data)
            flat[i] = orig
            fd = (fp - fm) / (2.0 * epsilon)
            ad = analytic.reshape(-1)[i]
            err = abs(fd - ad) / max(abs(fd), abs(ad), floor)
            worst = max(worst, err)
    return worst
