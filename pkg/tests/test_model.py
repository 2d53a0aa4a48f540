import numpy as np
import pytest

from repface import model as mdl
from repface.evaluation import check_gradient


@pytest.fixture
def state(rng):
    return mdl.init_model(6, (7,), 4, 5, rng)


def test_forward_shape_and_range(state, rng):
    cos, _ = mdl.forward(state, rng.standard_normal((9, 6)))
    assert cos.shape == (9, 5)
    assert np.all(np.abs(cos) < 1)


def test_backward_matches_fd(state, rng):
    x = rng.standard_normal((4, 6))
    W = rng.standard_normal((4, 5))

    def loss(st):
        return float(np.sum(W * np.sin(mdl.forward(st, x)[0])))

    cos, cache = mdl.forward(state, x)
    grads = mdl.backward(state, cache, W * np.cos(cos))
    for name in grads:
        if name == "centers":
            target = state.centers
        else:
            target = (state.weights if name[0] == "w" else state.biases)[int(name[1:])]

        def f(v, target=target):
            old = target.copy()
            target[...] = v
            out = loss(state)
            target[...] = old
            return out

        err, _ = check_gradient(f, lambda v, n=name: grads[n], target.copy())
        assert err < 1e-6, name


def test_imprint(state, rng):
    x = rng.standard_normal((30, 6))
    y = np.arange(30) % 5
    mdl.imprint_centers(state, x, y)
    e = mdl.embed(state, x)
    for c in range(5):
        v = e[y == c].mean(0)
        np.testing.assert_allclose(state.centers[c], v / np.linalg.norm(v), atol=1e-12)


def test_zero_lr_is_noop(state, rng):
    before = state.copy()
    cos, cache = mdl.forward(state, rng.standard_normal((3, 6)))
    mdl.sgd_step(state, mdl.backward(state, cache, np.ones_like(cos)), 0.0, 0.9, 5e-4)
    np.testing.assert_array_equal(state.centers, before.centers)
    for a, b in zip(state.weights, before.weights):
        np.testing.assert_array_equal(a, b)


def test_centers_stay_unit(state, rng):
    cos, cache = mdl.forward(state, rng.standard_normal((3, 6)))
    mdl.sgd_step(state, mdl.backward(state, cache, rng.standard_normal(cos.shape)), 0.5, 0.9, 0.0)
    np.testing.assert_allclose(np.linalg.norm(state.centers, axis=1), 1.0, atol=1e-12)


def test_array_round_trip(state):
    back = mdl.ModelState.from_arrays(state.to_arrays())
    np.testing.assert_array_equal(back.centers, state.centers)
    assert len(back.weights) == len(state.weights)
