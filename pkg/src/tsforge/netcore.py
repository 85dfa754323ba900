"""Tape-based reverse-mode autodiff over numpy arrays, plus the handful of
layers the denoiser, the sequence model and the classifier are built from.

Arrays are float64 unless ``default_dtype`` selects another type. A
``Tensor`` remembers its parents and a closure that pushes its gradient back
to them; ``backward`` walks that record in reverse topological order.
"""
from __future__ import annotations

import contextlib
import json
import math
from pathlib import Path

import numpy as np

MASK_VALUE = -1e9
DTYPE = np.float64


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily build tensors in ``dtype`` (float64 outside the block)."""
    global DTYPE
    old, DTYPE = DTYPE, np.dtype(dtype).type
    try:
        yield
    finally:
        DTYPE = old


class GraphError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward", "requires_grad")

    def __init__(self, data, parents=(), backward=None, requires_grad=False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def _accumulate(self, g):
        # never in place: incoming arrays may be shared with sibling nodes
        self.grad = g if self.grad is None else self.grad + g

    def backward(self):
        if self.data.size != 1:
            raise GraphError("backward() needs a scalar loss")
        if not self._parents:
            raise GraphError("no recorded computation: run a forward pass before backward()")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node._parents:
                # intermediate results are not kept after the sweep
                node._parents = ()
                node._backward = None
                node.grad = None if node is not self else node.grad

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _node(data, parents, backward):
    parents = tuple(p for p in parents)
    if not any(p.requires_grad for p in parents):
        return Tensor(data)
    return Tensor(data, parents, backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: a._accumulate(-g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), bw)


def matmul(a, b) -> Tensor:
    """Batched matmul on the last two axes; a 2-D right operand broadcasts."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if b.data.ndim == 2 and a.data.ndim > 2:
                a2 = a.data.reshape(-1, a.shape[-1])
                b._accumulate(a2.T @ g.reshape(-1, g.shape[-1]))
            else:
                b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _node(a.data @ b.data, (a, b), bw)


def reshape(a: Tensor, shape) -> Tensor:
    return _node(a.data.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(a.shape)))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return _node(np.swapaxes(a.data, ax1, ax2), (a,),
                 lambda g: a._accumulate(np.swapaxes(g, ax1, ax2)))


def take(a: Tensor, idx) -> Tensor:
    """Basic or integer-array indexing; repeated integer indices accumulate."""

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _node(a.data[idx], (a,), bw)


def concat(parts, axis=0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bw(g):
        for p, gp in zip(parts, np.split(g, sizes, axis=axis)):
            if p.requires_grad:
                p._accumulate(gp)

    return _node(np.concatenate([p.data for p in parts], axis=axis), parts, bw)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _node(out, (a,), bw)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, (a,), lambda g: a._accumulate(2.0 * a.data * g))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (x,), lambda g: x._accumulate(g * out * (1.0 - out)))


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    return _node(x.data * on, (x,), lambda g: x._accumulate(g * on))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh approximation; smooth, so finite-difference checks stay clean."""
    v = x.data
    v2 = v * v
    th = np.tanh(_GELU_C * v * (1.0 + 0.044715 * v2))
    out = 0.5 * v * (1.0 + th)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v2)
        x._accumulate(g * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * dinner))

    return _node(out, (x,), bw)


def softmax_rows(x) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        x._accumulate(s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _node(s, (x,), bw)


def layer_norm(x, gain=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then optional affine gain/bias."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def bw(g):
        gx = (inv / n) * (n * g - g.sum(axis=-1, keepdims=True)
                          - xhat * (g * xhat).sum(axis=-1, keepdims=True))
        x._accumulate(gx)

    y = _node(xhat, (x,), bw)
    if gain is not None:
        y = y * gain
    if bias is not None:
        y = y + bias
    return y


def dense_forward(x, weight, bias=None) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"dense input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    y = matmul(x, weight)
    return y if bias is None else y + bias


def mse(pred, target) -> Tensor:
    pred = as_tensor(pred)
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return mean(square(pred - target))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    labels = np.asarray(labels)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def bw(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        logits._accumulate(g * p / n)

    return _node(loss, (logits,), bw)


# attention ------------------------------------------------------------

def validate_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=DTYPE)
    if mask.ndim != 2:
        raise ValueError(f"attention mask must be 2-D, got {mask.shape}")
    if not np.all((mask == 0) | (mask == MASK_VALUE)):
        raise ValueError("attention mask entries must be 0 or MASK_VALUE")
    if np.any((mask != 0).all(axis=1)):
        raise ValueError("attention mask has a fully-masked row")
    return mask


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask=None):
    """q,k,v: (..., T, dh). Returns (output, weights array)."""
    scores = matmul(q, swapaxes(k, -1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        scores = scores + mask
    w = softmax_rows(scores)
    return matmul(w, v), w.data


class ParameterStore:
    """Named parameters, their gradients, and Adam moment state."""

    def __init__(self, seed: int | None = 0):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        self.rng = np.random.default_rng(seed)

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(np.array(value, dtype=DTYPE), requires_grad=True)
        self.params[name] = t
        return t

    def dense(self, name: str, fan_in: int, fan_out: int, bias: bool = True):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        self.add(f"{name}.weight", self.rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        if bias:
            self.add(f"{name}.bias", np.zeros(fan_out))

    def embedding(self, name: str, rows: int, width: int):
        self.add(name, self.rng.normal(0.0, 0.02, size=(rows, width)))

    def norm(self, name: str, width: int):
        self.add(f"{name}.gain", np.ones(width))
        self.add(f"{name}.bias", np.zeros(width))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (np.zeros_like(p.data) if p.grad is None else p.grad)
                for k, p in self.params.items()}

    def count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def state(self) -> dict:
        def enc(arrs):
            return {k: {"shape": list(a.shape), "values": [float(f"{x:.9g}") for x in a.ravel()]}
                    for k, a in arrs.items()}

        return {
            "params": enc({k: p.data for k, p in self.params.items()}),
            "optimizer": {"step": self.step, "m": enc(self.m), "v": enc(self.v)},
        }

    def load_state(self, state: dict):
        def dec(d):
            return {k: np.array(e["values"], dtype=DTYPE).reshape(e["shape"]) for k, e in d.items()}

        params = dec(state["params"])
        if set(params) != set(self.params):
            missing = set(self.params) ^ set(params)
            raise KeyError(f"checkpoint parameter names differ: {sorted(missing)}")
        for k, a in params.items():
            if a.shape != self.params[k].shape:
                raise ValueError(f"checkpoint shape mismatch for {k}: {a.shape}")
            self.params[k].data = a
        opt = state.get("optimizer", {})
        self.step = int(opt.get("step", 0))
        self.m = dec(opt.get("m", {}))
        self.v = dec(opt.get("v", {}))

    def save(self, path):
        Path(path).write_text(json.dumps(self.state()))

    def load(self, path):
        self.load_state(json.loads(Path(path).read_text()))


def optimizer_step(store: ParameterStore, learning_rate: float,
                   betas=(0.9, 0.999), eps: float = 1e-8):
    """One Adam update from the accumulated gradients."""
    b1, b2 = betas
    store.step += 1
    c1 = 1.0 - b1 ** store.step
    c2 = 1.0 - b2 ** store.step
    for name, p in store.params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m = store.m.get(name)
        if m is None:
            m = store.m[name] = np.zeros_like(p.data)
            store.v[name] = np.zeros_like(p.data)
        v = store.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - learning_rate * (m / c1) / (np.sqrt(v / c2) + eps)


# layer helpers bound to a store ------------------------------------------

def dense(store: ParameterStore, name: str, x) -> Tensor:
    bias = store[f"{name}.bias"] if f"{name}.bias" in store else None
    return dense_forward(x, store[f"{name}.weight"], bias)


def norm(store: ParameterStore, name: str, x) -> Tensor:
    return layer_norm(x, store[f"{name}.gain"], store[f"{name}.bias"])


def init_attention(store: ParameterStore, name: str, width: int):
    for proj in ("q", "k", "v", "o"):
        store.dense(f"{name}.{proj}", width, width)


def multi_head_attention(store: ParameterStore, name: str, q_in, kv_in, mask, heads: int,
                         return_weights: bool = False):
    """Projected multi-head attention; ``mask`` is an additive T_q x T_k matrix."""
    q_in, kv_in = as_tensor(q_in), as_tensor(kv_in)
    width = q_in.shape[-1]
    if width % heads:
        raise ValueError(f"width {width} not divisible by {heads} heads")
    if mask is not None:
        mask = validate_mask(mask)
        if mask.shape != (q_in.shape[-2], kv_in.shape[-2]):
            raise ValueError(f"mask shape {mask.shape} does not match attention")
    dh = width // heads

    def split(t):
        lead = t.shape[:-1]
        return swapaxes(reshape(t, lead + (heads, dh)), -2, -3)

    q = split(dense(store, f"{name}.q", q_in))
    k = split(dense(store, f"{name}.k", kv_in))
    v = split(dense(store, f"{name}.v", kv_in))
    ctx, w = scaled_dot_attention(q, k, v, mask)
    ctx = swapaxes(ctx, -2, -3)
    ctx = reshape(ctx, ctx.shape[:-2] + (width,))
    out = dense(store, f"{name}.o", ctx)
    return (out, w) if return_weights else out

