import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgsmkit import nn
from fgsmkit.data import one_hot
from fgsmkit.tensor import Rng

from gradcheck import check_model


def small_net(rng, dtype=np.float64, channels=(3, 4), size=8):
    layers = nn.build_backbone(2, channels) + [nn.Flatten()]
    flat = channels[-1] * (size // 4) ** 2
    layers += [nn.Dense(flat, 6), nn.ReLU(), nn.Dropout(0.25), nn.Dense(6, 2), nn.Softmax()]
    return nn.Model(layers, (2, size, size), dtype=dtype, rng=rng)


def batch(rng, n=3, shape=(2, 8, 8)):
    x = rng.uniform((n, *shape))
    y = one_hot(np.arange(n) % 2, 2, np.float64)
    return x, y


def test_softmax_symmetric_logits():
    model = nn.Model([nn.Softmax()], (2,), params=[[]])
    probs, _ = nn.forward(model, np.zeros((1, 2)))
    np.testing.assert_allclose(probs, [[0.5, 0.5]])


def test_dropout_identity_in_eval_mode():
    x = Rng(0).uniform((4, 5))
    layer = nn.Dropout(0.25)
    y, _ = layer.forward(x, [], False, None)
    np.testing.assert_array_equal(y, x)


def test_dropout_train_mode_is_inverted():
    x = np.ones((200, 50))
    y, mask = nn.Dropout(0.25).forward(x, [], True, Rng(1))
    kept = y[y != 0]
    np.testing.assert_allclose(kept, 1 / 0.75)
    assert abs((y == 0).mean() - 0.25) < 0.02


def test_dropout_rate_validation():
    with pytest.raises(ValueError):
        nn.Dropout(1.0)
    with pytest.raises(ValueError):
        nn.Dropout(-0.1)


def test_conv_delta_kernel_is_identity():
    conv = nn.Conv2D(1, 1, 3, 1, 1)
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    x = Rng(2).uniform((2, 1, 6, 5))
    y, _ = conv.forward(x, [w, np.zeros(1)], False, None)
    np.testing.assert_array_equal(y, x)


def test_conv_matches_direct_loop():
    rng = Rng(3)
    conv = nn.Conv2D(2, 3, 3, stride=2, padding=1)
    w = rng.normal((3, 2, 3, 3))
    b = rng.normal(3)
    x = rng.uniform((2, 2, 7, 6))
    y, _ = conv.forward(x, [w, b], False, None)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    expected = np.zeros(y.shape)
    for n in range(2):
        for o in range(3):
            for i in range(y.shape[2]):
                for j in range(y.shape[3]):
                    expected[n, o, i, j] = np.sum(xp[n, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * w[o]) + b[o]
    np.testing.assert_allclose(y, expected, rtol=1e-12, atol=1e-12)


def test_maxpool_ties_go_to_first_index_and_route_gradient():
    pool = nn.MaxPool2D(2, 2)
    x = np.array([[[[1.0, 1.0], [1.0, 0.0]]]])
    y, cache = pool.forward(x, [], False, None)
    assert y[0, 0, 0, 0] == 1.0
    dx, _ = pool.backward(np.ones_like(y), [], cache)
    np.testing.assert_array_equal(dx[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_maxpool_backward_routes_each_gradient_once():
    pool = nn.MaxPool2D(2, 2)
    x = Rng(4).uniform((2, 3, 6, 6))
    y, cache = pool.forward(x, [], False, None)
    dy = Rng(5).uniform(y.shape)
    dx, _ = pool.backward(dy, [], cache)
    assert np.count_nonzero(dx) == dy.size
    np.testing.assert_allclose(dx.sum(), dy.sum())


def test_overlapping_maxpool_accumulates():
    pool = nn.MaxPool2D(2, 1)
    x = np.zeros((1, 1, 3, 3))
    x[0, 0, 1, 1] = 5.0
    y, cache = pool.forward(x, [], False, None)
    dx, _ = pool.backward(np.ones_like(y), [], cache)
    assert dx[0, 0, 1, 1] == 4.0


def test_cross_entropy_examples():
    assert nn.cross_entropy(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]])) <= 1e-6
    assert nn.cross_entropy(np.array([[0.5, 0.5]]), np.array([[0.0, 1.0]])) == pytest.approx(np.log(2))
    both = nn.cross_entropy(np.array([[1.0, 0.0], [0.5, 0.5]]), np.array([[1.0, 0.0], [1.0, 0.0]]))
    assert both == pytest.approx(0.34657359, abs=1e-8)


def test_cross_entropy_floor_keeps_confident_mistakes_finite():
    loss = nn.cross_entropy(np.array([[0.0, 1.0]]), np.array([[1.0, 0.0]]))
    assert loss == pytest.approx(-np.log(1e-12))


def test_cross_entropy_shape_mismatch():
    with pytest.raises(ValueError):
        nn.cross_entropy(np.ones((2, 2)) / 2, np.ones((2, 3)))


def test_fused_top_gradient():
    # identity Dense so the input gradient equals the top gradient
    model = nn.Model([nn.Dense(2, 2), nn.Softmax()], (2,), params=[[np.eye(2), np.zeros(2)], []], dtype=np.float64)
    probs, trace = nn.forward(model, np.zeros((1, 2)))
    _, gx = nn.backward(model, trace, probs, np.array([[1.0, 0.0]]))
    np.testing.assert_allclose(gx, [[-0.5, 0.5]])


def test_backward_rejects_stale_or_foreign_trace():
    rng = Rng(6)
    model = small_net(rng)
    x, y = batch(rng)
    probs, trace = nn.forward(model, x)
    nn.backward(model, trace, probs, y)
    with pytest.raises(ValueError):
        nn.backward(model, trace, probs, y)
    probs2, trace2 = nn.forward(model, x)
    with pytest.raises(ValueError):
        nn.backward(model, trace2, probs2.copy(), y)
    with pytest.raises(ValueError):
        nn.backward(model.copy(), trace2, probs2, y)


def test_forward_shape_mismatch():
    model = small_net(Rng(7))
    with pytest.raises(ValueError):
        nn.forward(model, np.zeros((1, 3, 8, 8)))


def test_model_type_checks_layer_sequence():
    with pytest.raises(ValueError):
        nn.Model([nn.Dense(4, 2), nn.Softmax()], (5,), rng=Rng(0))
    with pytest.raises(ValueError):
        nn.Model([nn.Dense(4, 2)], (4,), rng=Rng(0))


def test_eval_forward_is_deterministic_and_consumes_no_rng():
    rng = Rng(8)
    model = small_net(rng)
    x, _ = batch(rng)
    r = Rng(9)
    state = r.state
    a, _ = nn.forward(model, x, "eval", r)
    b, _ = nn.forward(model, x, "eval", r)
    np.testing.assert_array_equal(a, b)
    assert r.state == state


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32))
def test_softmax_rows_are_distributions(seed):
    rng = Rng(seed)
    model = small_net(rng, dtype=np.float32)
    x, _ = batch(rng, n=4)
    probs, _ = nn.forward(model, x, "train", rng)
    assert np.all((probs >= 0) & (probs <= 1))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_param_count_dense():
    m = nn.Model([nn.Dense(128, 64), nn.Softmax()], (128,), rng=Rng(0))
    assert nn.param_count(m) == (8256, 0)
    m.frozen[0] = True
    assert nn.param_count(m) == (0, 8256)


def test_classifier_head():
    head = nn.build_head(512)
    assert len(head) == 7
    assert [type(layer).__name__ for layer in head] == ["Dense", "ReLU", "Dropout", "Dense", "ReLU", "Dense", "Softmax"]
    assert head[2].rate == 0.25
    m = nn.Model(head, (512,), rng=Rng(0))
    assert nn.param_count(m) == (74050, 0)
    probs, _ = nn.forward(m, np.zeros((5, 512), np.float32))
    assert probs.shape == (5, 2)


def test_desk_model_parameter_count_by_hand():
    m = nn.build_desk_model(Rng(0))
    conv = (3 * 3 * 3 * 16 + 16) + (3 * 3 * 16 * 32 + 32)
    flat = 32 * 8 * 8
    dense = (flat * 128 + 128) + (128 * 64 + 64) + (64 * 2 + 2)
    assert nn.param_count(m) == (conv + dense, 0)
    assert conv + dense == 275746


def test_he_init_scale():
    m = nn.Model([nn.Dense(400, 300), nn.Softmax()], (400,), rng=Rng(1), dtype=np.float64)
    assert abs(m.params[0][0].std() - np.sqrt(2 / 400)) < 0.002
    assert not m.params[0][1].any()


def test_spec_round_trip():
    m = small_net(Rng(2))
    again = nn.model_from_spec(m.spec_dict(), m.params, m.frozen, m.dtype)
    assert again.layers == m.layers


@pytest.mark.parametrize(
    "layers,shape",
    [
        ([nn.Flatten(), nn.Dense(12, 2), nn.Softmax()], (3, 2, 2)),
        ([nn.Conv2D(2, 3, 3, 1, 1), nn.Flatten(), nn.Dense(48, 2), nn.Softmax()], (2, 4, 4)),
        ([nn.Conv2D(2, 2, 2, 2, 0), nn.Flatten(), nn.Dense(8, 2), nn.Softmax()], (2, 4, 4)),
        ([nn.Flatten(), nn.Dense(8, 6), nn.ReLU(), nn.Dense(6, 2), nn.Softmax()], (2, 2, 2)),
        ([nn.MaxPool2D(2, 2), nn.Flatten(), nn.Dense(8, 2), nn.Softmax()], (2, 4, 4)),
        ([nn.Flatten(), nn.Dense(8, 6), nn.Dropout(0.3), nn.Dense(6, 2), nn.Softmax()], (2, 2, 2)),
    ],
    ids=["dense", "conv-same", "conv-stride", "relu", "maxpool", "dropout"],
)
def test_gradcheck_each_layer_type(layers, shape):
    rng = Rng(11)
    model = nn.Model(layers, shape, dtype=np.float64, rng=rng)
    x, y = batch(rng, n=3, shape=shape)
    mode = "train" if any(isinstance(layer, nn.Dropout) for layer in layers) else "eval"
    errs = check_model(model, x, y, mode=mode, max_entries=None)
    assert max(errs.values()) < 1e-4, errs


def test_gradcheck_two_block_network():
    rng = Rng(12)
    model = small_net(rng)
    x, y = batch(rng)
    errs = check_model(model, x, y, mode="train", seed=3)
    assert max(errs.values()) < 1e-4, errs
