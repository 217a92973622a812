"""Layers, model container and the forward/backward passes.

Every layer is a small frozen dataclass describing its hyper-parameters.
Parameters live on the :class:`Model`, not on the layers, so a layer spec can
be serialised as text and re-instantiated with any weights.

``backward`` returns gradients for the parameters *and* for the input batch;
the latter is what the FGSM attack consumes.
"""

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DEFAULT_DTYPE, Rng

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class Conv2D:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel_size, self.stride) < 1:
            raise ValueError(f"Conv2D dimensions must be positive: {self}")
        if self.padding < 0:
            raise ValueError(f"Conv2D padding must be >= 0: {self}")

    def output_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.in_channels:
            raise ValueError(f"Conv2D expects ({self.in_channels}, H, W), got {shape}")
        _, h, w = shape
        k, s, p = self.kernel_size, self.stride, self.padding
        ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"Conv2D kernel {k} too large for input {shape}")
        return (self.out_channels, ho, wo)

    def param_shapes(self):
        k = self.kernel_size
        return [(self.out_channels, self.in_channels, k, k), (self.out_channels,)]

    def fan_in(self):
        return self.in_channels * self.kernel_size**2

    def forward(self, x, params, train, rng):
        weight, bias = params
        n = x.shape[0]
        k, s, p = self.kernel_size, self.stride, self.padding
        _, ho, wo = self.output_shape(x.shape[1:])
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, -1)
        wmat = weight.reshape(self.out_channels, -1)
        out = cols @ wmat.T + bias
        out = np.ascontiguousarray(out.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2))
        return out, (cols, x.shape)

    def backward(self, dy, params, cache, need_grads=True):
        weight, _ = params
        cols, xshape = cache
        n, c, h, w = xshape
        k, s, p = self.kernel_size, self.stride, self.padding
        _, o, ho, wo = dy.shape
        dout = dy.transpose(0, 2, 3, 1).reshape(-1, o)
        grads = None
        if need_grads:
            grads = [(dout.T @ cols).reshape(weight.shape), dout.sum(axis=0)]
        dcols = (dout @ weight.reshape(o, -1)).reshape(n, ho, wo, c, k, k)
        dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[..., i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, p : p + h, p : p + w] if p else dxp
        return dx, grads


@dataclass(frozen=True)
class ReLU:
    def output_shape(self, shape):
        return tuple(shape)

    def forward(self, x, params, train, rng):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, params, cache, need_grads=True):
        return dy * cache, None


@dataclass(frozen=True)
class MaxPool2D:
    window: int = 2
    stride: int = 2

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise ValueError(f"MaxPool2D window/stride must be positive: {self}")

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ValueError(f"MaxPool2D expects (C, H, W), got {shape}")
        c, h, w = shape
        ho, wo = (h - self.window) // self.stride + 1, (w - self.window) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"MaxPool2D window {self.window} too large for input {shape}")
        return (c, ho, wo)

    def forward(self, x, params, train, rng):
        k, s = self.window, self.stride
        _, ho, wo = self.output_shape(x.shape[1:])
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        win = win.reshape(*win.shape[:4], k * k)
        # argmax keeps the first (row-major lowest) position on ties
        idx = win.argmax(axis=-1)
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return out, (idx, x.shape)

    def backward(self, dy, params, cache, need_grads=True):
        idx, xshape = cache
        k, s = self.window, self.stride
        n, c, ho, wo = dy.shape
        nn_, cc, hh, ww = np.indices((n, c, ho, wo), sparse=True)
        rows = hh * s + idx // k
        cols = ww * s + idx % k
        dx = np.zeros(xshape, dtype=dy.dtype)
        if s >= k:
            dx[nn_, cc, rows, cols] = dy
        else:
            np.add.at(dx, (nn_, cc, rows, cols), dy)
        return dx, None


@dataclass(frozen=True)
class Flatten:
    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, params, train, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, params, cache, need_grads=True):
        return dy.reshape(cache), None


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int

    def __post_init__(self):
        if self.in_features < 1 or self.out_features < 1:
            raise ValueError(f"Dense dimensions must be positive: {self}")

    def output_shape(self, shape):
        if tuple(shape) != (self.in_features,):
            raise ValueError(f"Dense expects ({self.in_features},), got {tuple(shape)}")
        return (self.out_features,)

    def param_shapes(self):
        return [(self.in_features, self.out_features), (self.out_features,)]

    def fan_in(self):
        return self.in_features

    def forward(self, x, params, train, rng):
        weight, bias = params
        return x @ weight + bias, x

    def backward(self, dy, params, cache, need_grads=True):
        weight, _ = params
        grads = [cache.T @ dy, dy.sum(axis=0)] if need_grads else None
        return dy @ weight.T, grads


@dataclass(frozen=True)
class Dropout:
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"Dropout rate must lie in [0, 1), got {self.rate}")

    def output_shape(self, shape):
        return tuple(shape)

    def forward(self, x, params, train, rng):
        if not train or self.rate == 0.0:
            return x, None
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        keep = rng.uniform(x.shape) >= self.rate
        mask = keep.astype(x.dtype) / x.dtype.type(1.0 - self.rate)
        return x * mask, mask

    def backward(self, dy, params, cache, need_grads=True):
        return (dy if cache is None else dy * cache), None


@dataclass(frozen=True)
class Softmax:
    def output_shape(self, shape):
        if len(shape) != 1:
            raise ValueError(f"Softmax expects a flat feature vector, got {shape}")
        return tuple(shape)

    def forward(self, x, params, train, rng):
        z = np.exp(x - x.max(axis=1, keepdims=True))
        p = z / z.sum(axis=1, keepdims=True)
        return p, p

    def backward(self, dy, params, cache, need_grads=True):
        p = cache
        return p * (dy - (dy * p).sum(axis=1, keepdims=True)), None


LAYER_TYPES = {cls.__name__: cls for cls in (Conv2D, ReLU, MaxPool2D, Flatten, Dense, Dropout, Softmax)}


def layer_to_dict(layer) -> dict:
    return {"type": type(layer).__name__, **asdict(layer)}


def layer_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type")
    if kind not in LAYER_TYPES:
        raise ValueError(f"unknown layer type {kind!r}")
    return LAYER_TYPES[kind](**d)


def has_params(layer) -> bool:
    return hasattr(layer, "param_shapes")


class Model:
    """Ordered layer stack with per-layer parameters and freeze flags.

    The layer sequence is type-checked against ``input_shape`` on
    construction and must end in :class:`Softmax`.
    """

    def __init__(self, layers, input_shape, params=None, frozen=None, dtype=DEFAULT_DTYPE, rng: Optional[Rng] = None):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.dtype = np.dtype(dtype)
        if not self.layers or not isinstance(self.layers[-1], Softmax):
            raise ValueError("model must end with a Softmax layer")
        shape = self.input_shape
        self.shapes = [shape]
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ValueError as exc:
                raise ValueError(f"layer {i} ({type(layer).__name__}): {exc}") from None
            self.shapes.append(shape)
        self.frozen = list(frozen) if frozen is not None else [False] * len(self.layers)
        if len(self.frozen) != len(self.layers):
            raise ValueError("frozen flags must match layer count")
        if params is None:
            if rng is None:
                raise ValueError("need either params or an rng to initialise them")
            params = init_params(self.layers, rng, self.dtype)
        self.params = [[np.asarray(t, dtype=self.dtype) for t in p] for p in params]
        for layer, p in zip(self.layers, self.params):
            expected = layer.param_shapes() if has_params(layer) else []
            if [t.shape for t in p] != [tuple(s) for s in expected]:
                raise ValueError(f"parameter shapes {[t.shape for t in p]} do not match {expected} for {layer}")

    @property
    def n_classes(self):
        return self.shapes[-1][0]

    def astype(self, dtype) -> "Model":
        return Model(self.layers, self.input_shape, self.params, self.frozen, dtype)

    def copy(self) -> "Model":
        return Model(self.layers, self.input_shape, [[t.copy() for t in p] for p in self.params], self.frozen, self.dtype)

    def spec_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [layer_to_dict(layer) for layer in self.layers],
        }


def init_params(layers, rng: Rng, dtype=DEFAULT_DTYPE):
    """He-normal weights (stddev sqrt(2/fan_in)), zero biases."""
    params = []
    for layer in layers:
        if not has_params(layer):
            params.append([])
            continue
        wshape, bshape = layer.param_shapes()
        std = np.sqrt(2.0 / layer.fan_in())
        weight = rng.normal(wshape, 0.0, std).astype(dtype)
        params.append([weight, np.zeros(bshape, dtype=dtype)])
    return params


@dataclass
class ForwardTrace:
    caches: list
    probs: np.ndarray
    model_id: int
    consumed: bool = field(default=False)


def forward(model: Model, batch, mode="eval", rng: Optional[Rng] = None):
    """Run ``batch`` (N, *input_shape) through the model.

    Returns ``(probs, trace)``. Dropout is active only for ``mode="train"``;
    eval mode never touches ``rng``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(batch, dtype=model.dtype)
    if x.shape[1:] != model.input_shape:
        raise ValueError(f"batch shape {x.shape} does not match model input {model.input_shape}")
    train = mode == "train"
    caches = []
    for layer, p in zip(model.layers, model.params):
        x, cache = layer.forward(x, p, train, rng)
        caches.append(cache)
    return x, ForwardTrace(caches, x, id(model))


def predict(model: Model, batch, batch_size=256) -> np.ndarray:
    """Eval-mode class probabilities, computed in chunks."""
    out = [forward(model, batch[i : i + batch_size])[0] for i in range(0, len(batch), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.n_classes), dtype=model.dtype)


def cross_entropy(probs, onehot) -> float:
    """Mean over the batch of -sum_k y_k log(max(p_k, 1e-12))."""
    probs = np.asarray(probs)
    onehot = np.asarray(onehot)
    if probs.shape != onehot.shape or probs.ndim != 2:
        raise ValueError(f"shape mismatch: probs {probs.shape} vs onehot {onehot.shape}")
    logp = np.log(np.maximum(probs.astype(np.float64), LOG_FLOOR))
    per_sample = -(onehot * logp).sum(axis=1)
    total = 0.0
    for v in per_sample:
        total += float(v)
    return total / len(per_sample)


def backward(model: Model, trace: ForwardTrace, probs, onehot):
    """Gradients of the mean cross-entropy.

    Returns ``(param_grads, input_grad)``. ``param_grads[i]`` is ``None`` for
    frozen or parameter-free layers. The softmax/cross-entropy pair is fused:
    the gradient entering the last non-softmax layer is ``(probs - onehot)/N``.
    """
    if trace.consumed:
        raise ValueError("forward trace has already been consumed by a backward pass")
    if trace.model_id != id(model) or trace.probs is not probs:
        raise ValueError("forward trace does not match this model/probs")
    onehot = np.asarray(onehot, dtype=model.dtype)
    if onehot.shape != probs.shape:
        raise ValueError(f"shape mismatch: probs {probs.shape} vs onehot {onehot.shape}")
    trace.consumed = True
    n = probs.shape[0]
    dy = (probs - onehot) / model.dtype.type(n)
    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 2, -1, -1):
        layer = model.layers[i]
        need = has_params(layer) and not model.frozen[i]
        dy, g = layer.backward(dy, model.params[i], trace.caches[i], need)
        grads[i] = g
    return grads, dy


def param_count(model: Model):
    trainable = non_trainable = 0
    for p, frozen in zip(model.params, model.frozen):
        size = sum(t.size for t in p)
        if frozen:
            non_trainable += size
        else:
            trainable += size
    return trainable, non_trainable


def build_head(flatten_dim: int, n_classes: int = 2):
    """Dense 128 + ReLU + Dropout 0.25, Dense 64 + ReLU, Dense 2 + Softmax."""
    if flatten_dim < 1:
        raise ValueError(f"flatten_dim must be >= 1, got {flatten_dim}")
    return [
        Dense(flatten_dim, 128),
        ReLU(),
        Dropout(0.25),
        Dense(128, 64),
        ReLU(),
        Dense(64, n_classes),
        Softmax(),
    ]


def build_backbone(in_channels=3, conv_channels=(16, 32), kernel_size=3, padding=1):
    """Conv -> ReLU -> MaxPool(2) blocks, one per entry of ``conv_channels``."""
    layers = []
    c = in_channels
    for out in conv_channels:
        layers += [Conv2D(c, out, kernel_size, 1, padding), ReLU(), MaxPool2D(2, 2)]
        c = out
    return layers


def build_desk_model(rng: Rng, image_size=32, in_channels=3, conv_channels=(16, 32), n_classes=2, dtype=DEFAULT_DTYPE) -> Model:
    backbone = build_backbone(in_channels, conv_channels)
    input_shape = (in_channels, image_size, image_size)
    shape = input_shape
    for layer in backbone:
        shape = layer.output_shape(shape)
    layers = backbone + [Flatten()] + build_head(int(np.prod(shape)), n_classes)
    return Model(layers, input_shape, dtype=dtype, rng=rng)


def model_from_spec(spec: dict, params, frozen, dtype=DEFAULT_DTYPE) -> Model:
    layers = [layer_from_dict(d) for d in spec["layers"]]
    return Model(layers, spec["input_shape"], params, frozen, dtype)
