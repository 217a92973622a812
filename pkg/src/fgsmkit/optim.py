"""Adam and the epoch/batch training loop."""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import AugmentConfig, Dataset, augment_batch, one_hot
from .tensor import Rng


class NumericError(FloatingPointError):
    """Raised when a loss or parameter turns non-finite."""


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=1e-4, **kw):
        return cls([[np.zeros_like(t) for t in p] for p in params], [[np.zeros_like(t) for t in p] for p in params], lr=lr, **kw)


def adam_step(params, grads, state: AdamState, frozen=None):
    """One in-place Adam update with bias correction.

    ``grads[i]`` may be ``None`` (no update for that layer); layers flagged in
    ``frozen`` are never touched. Returns ``(params, state)``.
    """
    if len(grads) != len(params):
        raise ValueError(f"got {len(grads)} gradient groups for {len(params)} parameter groups")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None or (frozen is not None and frozen[i]):
            continue
        for theta, grad, m, v in zip(p, g, state.m[i], state.v[i]):
            if grad.shape != theta.shape:
                raise ValueError(f"gradient shape {grad.shape} does not match parameter {theta.shape}")
            dt = theta.dtype.type
            m *= dt(state.beta1)
            m += dt(1.0 - state.beta1) * grad
            v *= dt(state.beta2)
            v += dt(1.0 - state.beta2) * (grad * grad)
            m_hat = m / dt(bc1)
            v_hat = v / dt(bc2)
            theta -= dt(state.lr) * m_hat / (np.sqrt(v_hat) + dt(state.eps))
    return params, state


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 7
    shuffle: bool = True
    rotation_range: float = 15.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")


HISTORY_COLUMNS = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]


@dataclass
class History:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def columns(self):
        extra = [k for k in self.records[0] if k not in HISTORY_COLUMNS] if self.records else []
        return HISTORY_COLUMNS + extra

    def column(self, name):
        return [r[name] for r in self.records]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for r in self.records:
            writer.writerow([r["epoch"]] + [f"{r[c]:.6f}" for c in self.columns[1:]])
        return buf.getvalue()


def freeze(model: nn.Model, layer_indices) -> nn.Model:
    for i in layer_indices:
        if not 0 <= i < len(model.layers):
            raise IndexError(f"layer index {i} out of range for {len(model.layers)} layers")
        model.frozen[i] = True
    return model


def evaluate(model: nn.Model, dataset: Dataset, batch_size=256):
    """Eval-mode (loss, accuracy) on a whole dataset."""
    probs = nn.predict(model, dataset.images, batch_size)
    loss = nn.cross_entropy(probs, one_hot(dataset.labels, model.n_classes))
    acc = float(np.mean(probs.argmax(axis=1) == dataset.labels))
    return loss, acc


def clean_batch_grads(model, xb, yb, rng):
    """Train-mode forward/backward on one batch. Returns (grads, loss, probs)."""
    probs, trace = nn.forward(model, xb, "train", rng)
    loss = nn.cross_entropy(probs, yb)
    grads, _ = nn.backward(model, trace, probs, yb)
    return grads, loss, probs


def check_finite(loss, model):
    if not np.isfinite(loss):
        raise NumericError(f"non-finite training loss: {loss}")
    for p in model.params:
        for t in p:
            if not np.all(np.isfinite(t)):
                raise NumericError("non-finite parameter after update")


def train_loop(model, train_set, val_set, config: TrainConfig, rng, batch_grads, epoch_hook=None):
    """Shared epoch/batch loop used by :func:`fit` and adversarial training.

    ``batch_grads(model, xb, yb, rng) -> (grads, loss, probs)``;
    ``epoch_hook(model) -> dict`` adds extra History columns.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    for ds in (train_set, val_set):
        if ds.images.shape[1:] != model.input_shape:
            raise ValueError(f"dataset images {ds.images.shape[1:]} do not match model input {model.input_shape}")
    state = AdamState.for_params(model.params, lr=config.lr)
    augment = AugmentConfig(config.rotation_range)
    history = History()
    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb = augment_batch(train_set.images[idx], augment, rng)
            yb = one_hot(train_set.labels[idx], model.n_classes, model.dtype)
            grads, loss, probs = batch_grads(model, xb, yb, rng)
            adam_step(model.params, grads, state, model.frozen)
            check_finite(loss, model)
            loss_sum += loss * len(idx)
            correct += int(np.sum(probs.argmax(axis=1) == train_set.labels[idx]))
        val_loss, val_acc = evaluate(model, val_set)
        record = {
            "epoch": epoch,
            "train_loss": loss_sum / n,
            "train_acc": correct / n,
            "val_loss": val_loss,
            "val_acc": val_acc,
        }
        if epoch_hook is not None:
            record.update(epoch_hook(model))
        history.records.append(record)
    return model, history


def fit(model: nn.Model, train_set: Dataset, val_set: Dataset, config: TrainConfig, rng: Rng = None):
    """Train with Adam on shuffled, rotation-augmented mini-batches.

    The last partial batch is kept. Returns ``(model, History)``; the model
    is updated in place.
    """
    if rng is None:
        rng = Rng(config.seed)
    return train_loop(model, train_set, val_set, config, rng, clean_batch_grads)
