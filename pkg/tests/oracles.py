"""Independent reference computations used by the tests."""
import math

import numpy as np


def numeric_grad(f, arr, h=1e-4):
    """Central differences of scalar f() with respect to every entry of ``arr`` (in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        up = f()
        arr[i] = old - h
        down = f()
        arr[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


def check_store_grads(store, loss_fn, tol=1e-3, max_entries=None):
    """Compare tape gradients of ``loss_fn()`` against finite differences for every
    parameter in ``store``; returns {name: relative error}."""
    store.zero_grad()
    loss_fn().backward()
    analytic = {k: v.copy() for k, v in store.grads().items()}
    errors = {}
    for name in store:
        p = store[name]
        numeric = numeric_grad(lambda: float(loss_fn().data), p.data)
        errors[name] = rel_error(analytic[name], numeric)
    return errors


def attention_loops(q_in, kv_in, mask, heads, wq, bq, wk, bk, wv, bv, wo, bo):
    """Multi-head attention written with explicit Python loops."""
    q_in = np.asarray(q_in)
    kv_in = np.asarray(kv_in)
    tq, width = q_in.shape
    tk = kv_in.shape[0]
    dh = width // heads
    q = q_in @ wq + bq
    k = kv_in @ wk + bk
    v = kv_in @ wv + bv
    ctx = np.zeros((tq, width))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(tq):
            logits = [sum(q[i, sl][c] * k[j, sl][c] for c in range(dh)) / math.sqrt(dh)
                      + (0.0 if mask is None else mask[i, j]) for j in range(tk)]
            top = max(logits)
            ex = [math.exp(l - top) for l in logits]
            tot = sum(ex)
            for j in range(tk):
                ctx[i, sl] += (ex[j] / tot) * v[j, sl]
    return ctx @ wo + bo


def scan_boundaries(values, times, levels):
    """Rightmost sign change of values - level, by brute force over the grid.

    The boundary is the first time on the far side of the last crossing.
    """
    out = []
    for q in levels:
        side = values >= q
        best = None
        for i in range(1, len(values)):
            if side[i] != side[i - 1]:
                best = int(times[i])
        out.append(best)
    return out


def weighted_loss_loops(pred, target, step_weights):
    """sum_t w(t) * mean_j (pred - target)^2, averaged over the batch."""
    n, T, d = pred.shape
    total = 0.0
    for b in range(n):
        for t in range(T):
            total += step_weights[t] * sum((pred[b, t, j] - target[b, t, j]) ** 2 for j in range(d)) / d
    return total / n
