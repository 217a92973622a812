import hashlib

import numpy as np
import pytest

from fgsmkit import nn, optim
from fgsmkit.data import synthesize, stratified_split
from fgsmkit.optim import AdamState, TrainConfig, adam_step, fit, freeze
from fgsmkit.tensor import Rng


def adam_oracle(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam on python floats."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / ((v / (1 - b2**t)) ** 0.5 + eps)
    return theta


def scalar_params(value=0.0, dtype=np.float64):
    return [[np.array([value], dtype=dtype)]]


def test_zero_gradient_leaves_params():
    params = scalar_params(1.5)
    state = AdamState.for_params(params, lr=0.1)
    adam_step(params, [[np.zeros(1)]], state)
    assert params[0][0][0] == 1.5


def test_first_step_is_lr():
    params = scalar_params(0.0)
    state = AdamState.for_params(params, lr=0.1)
    adam_step(params, [[np.ones(1)]], state)
    assert params[0][0][0] == pytest.approx(-0.1, abs=1e-8)
    assert params[0][0][0] == pytest.approx(adam_oracle(0.0, [1.0], 0.1), abs=1e-15)


def test_matches_scalar_oracle_over_many_steps():
    rng = Rng(1)
    gs = rng.normal(50).tolist()
    params = scalar_params(0.3)
    state = AdamState.for_params(params, lr=0.01)
    for g in gs:
        adam_step(params, [[np.array([g])]], state)
    assert params[0][0][0] == pytest.approx(adam_oracle(0.3, gs, 0.01), abs=1e-12)
    assert state.t == 50


def test_converges_on_quadratic():
    params = scalar_params(1.0)
    state = AdamState.for_params(params, lr=0.1)
    for _ in range(500):
        adam_step(params, [[2 * params[0][0]]], state)
    assert abs(params[0][0][0]) < 1e-3


def test_lr_zero_leaves_params():
    params = [[Rng(2).normal((3, 3))]]
    before = params[0][0].copy()
    state = AdamState.for_params(params, lr=0.0)
    for _ in range(5):
        adam_step(params, [[np.ones((3, 3))]], state)
    np.testing.assert_array_equal(params[0][0], before)


def test_frozen_and_missing_grads_untouched():
    params = [[np.ones(2)], [np.ones(2)]]
    state = AdamState.for_params(params, lr=0.1)
    adam_step(params, [[np.ones(2)], [np.ones(2)]], state, frozen=[True, False])
    np.testing.assert_array_equal(params[0][0], [1, 1])
    assert params[1][0][0] < 1
    adam_step(params, [None, None], state)


def test_shape_mismatch():
    params = scalar_params()
    with pytest.raises(ValueError):
        adam_step(params, [[np.ones(2)]], AdamState.for_params(params))


@pytest.mark.parametrize("kw", [{"epochs": 0}, {"batch_size": 0}, {"lr": 0.0}, {"lr": -1.0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_freeze():
    model = nn.build_desk_model(Rng(0), image_size=8, conv_channels=(2,))
    with pytest.raises(IndexError):
        freeze(model, [len(model.layers)])
    assert nn.param_count(model)[1] == 0
    freeze(model, range(len(model.layers)))
    assert nn.param_count(model)[0] == 0


def small_problem(seed=0, n=24, size=8):
    rng = Rng(seed)
    ds = synthesize(n, size, rng.spawn(0), intensity=(0.55, 1.0))
    train, val = stratified_split(ds, 0.7, rng.spawn(1))
    model = nn.build_desk_model(rng.spawn(2), image_size=size, conv_channels=(4, 4))
    return model, train, val


def digest(model):
    h = hashlib.sha256()
    for p in model.params:
        for t in p:
            h.update(t.tobytes())
    return h.hexdigest()


def test_fit_is_deterministic():
    cfg = TrainConfig(epochs=3, batch_size=8, lr=1e-3)
    runs = []
    for _ in range(2):
        model, train, val = small_problem()
        model, hist = fit(model, train, val, cfg, Rng(5))
        runs.append((hist.to_csv(), digest(model)))
    assert runs[0] == runs[1]
    assert len(hist) == 3
    assert hist.to_csv().splitlines()[0] == "epoch,train_loss,train_acc,val_loss,val_acc"


def test_fit_loss_decreases():
    model, train, val = small_problem(n=40)
    _, hist = fit(model, train, val, TrainConfig(epochs=6, batch_size=8, lr=1e-3), Rng(1))
    losses = hist.column("train_loss")
    assert losses[-1] < losses[0]


def test_frozen_layers_bit_identical_after_fit():
    model, train, val = small_problem()
    freeze(model, [0])
    before = [t.copy() for t in model.params[0]]
    fit(model, train, val, TrainConfig(epochs=2, batch_size=8, lr=1e-3), Rng(2))
    for a, b in zip(before, model.params[0]):
        assert a.tobytes() == b.tobytes()
    assert not np.array_equal(model.params[3][0], nn.build_desk_model(Rng(0).spawn(2), image_size=8, conv_channels=(4, 4)).params[3][0])


def test_fit_rejects_empty_or_mismatched_data():
    model, train, val = small_problem()
    with pytest.raises(ValueError):
        fit(model, train.subset([]), val, TrainConfig(epochs=1))
    other = nn.build_desk_model(Rng(0), image_size=16, conv_channels=(4, 4))
    with pytest.raises(ValueError):
        fit(other, train, val, TrainConfig(epochs=1))


def test_nan_loss_raises_numeric_error():
    model, train, val = small_problem()
    model.params[-2][0][:] = np.nan
    with pytest.raises(optim.NumericError):
        fit(model, train, val, TrainConfig(epochs=1, batch_size=8), Rng(0))
