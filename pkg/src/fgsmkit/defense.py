"""Adversarial training and robust accuracy."""

import numpy as np

from . import nn
from .attack import FgsmConfig, attack_dataset, fgsm
from .data import Dataset
from .optim import TrainConfig, clean_batch_grads, train_loop
from .tensor import Rng


def robust_accuracy(model: nn.Model, dataset: Dataset, fgsm_config: FgsmConfig) -> float:
    adv = attack_dataset(model, dataset, fgsm_config)
    probs = nn.predict(model, adv.images)
    return float(np.mean(probs.argmax(axis=1) == adv.labels))


def adversarial_fit(
    model: nn.Model,
    train_set: Dataset,
    val_set: Dataset,
    train_config: TrainConfig,
    fgsm_config: FgsmConfig,
    mix_alpha: float = 0.5,
    rng: Rng = None,
):
    """Minimise ``alpha * L(x, y) + (1 - alpha) * L(x_adv, y)``.

    ``x_adv`` is regenerated for every batch against the current weights
    (eval mode). With ``alpha == 1`` or ``epsilon == 0`` the adversarial term
    is skipped entirely, so the run is bit-identical to :func:`optim.fit`.
    History gains a ``robust_val_acc`` column.
    """
    if not 0.0 <= mix_alpha <= 1.0:
        raise ValueError(f"mix_alpha must lie in [0, 1], got {mix_alpha}")
    if rng is None:
        rng = Rng(train_config.seed)
    plain = mix_alpha == 1.0 or fgsm_config.epsilon == 0

    def batch_grads(m, xb, yb, r):
        if plain:
            return clean_batch_grads(m, xb, yb, r)
        x_adv = fgsm(m, xb, yb, fgsm_config)
        g_clean, loss_clean, probs = clean_batch_grads(m, xb, yb, r)
        g_adv, loss_adv, _ = clean_batch_grads(m, x_adv, yb, r)
        a = m.dtype.type(mix_alpha)
        b = m.dtype.type(1.0 - mix_alpha)
        grads = [None if gc is None else [a * c + b * d for c, d in zip(gc, ga)] for gc, ga in zip(g_clean, g_adv)]
        return grads, mix_alpha * loss_clean + (1.0 - mix_alpha) * loss_adv, probs

    def hook(m):
        return {"robust_val_acc": robust_accuracy(m, val_set, fgsm_config)}

    return train_loop(model, train_set, val_set, train_config, rng, batch_grads, hook)
