"""Fast Gradient Sign Method."""

from dataclasses import dataclass

import numpy as np

from . import nn
from .data import Dataset, one_hot
from .tensor import clip, sign


@dataclass
class FgsmConfig:
    epsilon: float = 0.1
    clip_min: float = 0.0
    clip_max: float = 1.0
    # False disables clipping (only used to study the raw linear behaviour)
    clip: bool = True
    batch_size: int = 256

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.clip_min < self.clip_max:
            raise ValueError(f"clip_min must be < clip_max, got {self.clip_min}, {self.clip_max}")


def input_gradient(model: nn.Model, x, y_onehot) -> np.ndarray:
    """d(mean cross-entropy)/dx, computed in eval mode."""
    probs, trace = nn.forward(model, x, "eval")
    _, grad = nn.backward(model, trace, probs, y_onehot)
    return grad


def fgsm(model: nn.Model, x, y_onehot, config: FgsmConfig) -> np.ndarray:
    """Untargeted one-step attack against the true labels:
    ``clip(x + eps * sign(grad_x loss), clip_min, clip_max)``."""
    x = np.asarray(x, dtype=model.dtype)
    if config.epsilon == 0:
        return x.copy()
    grad = input_gradient(model, x, y_onehot)
    x_adv = x + model.dtype.type(config.epsilon) * sign(grad)
    if config.clip:
        x_adv = clip(x_adv, config.clip_min, config.clip_max)
    return enforce_budget(x, x_adv, config.epsilon)


def enforce_budget(x, x_adv, epsilon):
    """Clamp ``x_adv`` so ``|x_adv - x| <= epsilon`` holds exactly when the
    difference is taken in float64 (``x + eps`` rounded to float32 can
    overshoot by an ulp)."""
    dt = x_adv.dtype
    x64 = np.asarray(x, dtype=np.float64)
    lo = (x64 - epsilon).astype(dt)
    lo = np.where(lo.astype(np.float64) - x64 < -epsilon, np.nextafter(lo, dt.type(np.inf)), lo)
    hi = (x64 + epsilon).astype(dt)
    hi = np.where(hi.astype(np.float64) - x64 > epsilon, np.nextafter(hi, dt.type(-np.inf)), hi)
    return np.clip(x_adv, lo, hi)


def attack_dataset(model: nn.Model, dataset: Dataset, config: FgsmConfig) -> Dataset:
    """FGSM applied batch-wise; labels, ids and ordering are preserved."""
    out = []
    for start in range(0, len(dataset), config.batch_size):
        xb = dataset.images[start : start + config.batch_size]
        yb = one_hot(dataset.labels[start : start + config.batch_size], model.n_classes, model.dtype)
        out.append(fgsm(model, xb, yb, config))
    if not out:
        return Dataset(dataset.images.copy(), dataset.labels.copy(), dataset.class_names, dataset.ids.copy())
    images = np.concatenate(out).astype(dataset.images.dtype)
    if config.clip:
        images = np.clip(images, config.clip_min, config.clip_max)
    images = enforce_budget(dataset.images, images, config.epsilon)
    return Dataset(images, dataset.labels.copy(), dataset.class_names, dataset.ids.copy())


def perturbation_stats(x, x_adv) -> dict:
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    if x.shape != x_adv.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_adv.shape}")
    d = x_adv - x
    return {
        "linf": float(np.abs(d).max()) if d.size else 0.0,
        "l2": float(np.sqrt(np.sum(d * d))),
        "mean_abs": float(np.abs(d).mean()) if d.size else 0.0,
        "changed_fraction": float(np.mean(d != 0)) if d.size else 0.0,
    }
