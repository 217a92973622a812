"""Central finite-difference oracle for the backprop tests."""

import numpy as np

from fgsmkit import nn
from fgsmkit.tensor import Rng


def loss_at(model, x, y, mode, seed):
    rng = Rng(seed) if mode == "train" else None
    probs, _ = nn.forward(model, x, mode, rng)
    return nn.cross_entropy(probs, y)


def numeric_grad(f, arr, h=1e-5, max_entries=None, rng=None):
    """Central differences of ``f()`` w.r.t. entries of ``arr`` (perturbed in
    place). Returns (flat indices, gradient values)."""
    flat = arr.reshape(-1)
    idx = np.arange(flat.size)
    if max_entries is not None and flat.size > max_entries:
        idx = np.sort(rng.permutation(flat.size)[:max_entries])
    out = np.empty(len(idx))
    for n, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        out[n] = (up - down) / (2 * h)
    return idx, out


def rel_error(analytic, numeric):
    """max |a - n| scaled by the largest gradient magnitude in the tensor."""
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def check_model(model64, x, y, mode="eval", seed=0, h=1e-5, max_entries=60, analytic_model=None):
    """Compare backprop against finite differences on ``model64`` (float64).

    ``analytic_model`` (default: ``model64``) supplies the backprop gradients,
    e.g. a float32 copy. Returns the worst relative error over all trainable
    tensors and the input.
    """
    analytic_model = analytic_model or model64
    rng = Rng(seed) if mode == "train" else None
    xa = x.astype(analytic_model.dtype)
    probs, trace = nn.forward(analytic_model, xa, mode, rng)
    grads, gx = nn.backward(analytic_model, trace, probs, y.astype(analytic_model.dtype))
    pick = Rng(seed + 1)
    worst = {}
    x64 = x.astype(np.float64).copy()
    f = lambda: loss_at(model64, x64, y, mode, seed)  # noqa: E731
    for i, group in enumerate(grads):
        if group is None:
            continue
        for j, g in enumerate(group):
            idx, num = numeric_grad(f, model64.params[i][j], h, max_entries, pick)
            worst[f"layer{i}.param{j}"] = rel_error(g.reshape(-1)[idx].astype(np.float64), num)
    idx, num = numeric_grad(f, x64, h, max_entries, pick)
    worst["input"] = rel_error(gx.reshape(-1)[idx].astype(np.float64), num)
    return worst
