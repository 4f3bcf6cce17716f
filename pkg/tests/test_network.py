import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guiattack.errors import NumericError
from guiattack.imagecore import SeededStream
from guiattack.recognizer.network import (
    N_CLASSES,
    Conv,
    Dense,
    Gradient,
    MaxPool,
    NetworkSpec,
    ReLU,
    backward,
    batch_loss_and_grads,
    forward,
    grad_check,
    init_params,
    loss,
    small_spec,
    softmax,
    to_input,
    zero_params,
)


@pytest.fixture(scope="module")
def small():
    s = SeededStream(3)
    return init_params(small_spec(16), s.child("init"), np.float64)


def test_default_spec_shapes():
    spec = NetworkSpec()
    assert spec.input_side == 64 and spec.n_classes == N_CLASSES == 5
    assert spec.shapes()[-1] == (N_CLASSES,)
    assert spec.n_params() == 8765 == sum(int(np.prod(s)) for s in spec.param_shapes())
    assert NetworkSpec.from_dict(spec.to_dict()) == spec


def test_spec_rejects_incompatible_layers():
    with pytest.raises(ValueError):
        NetworkSpec(8, 3, 5, (Conv(4, 3, 1, 1), MaxPool(2), MaxPool(2), MaxPool(2), MaxPool(2), Dense(5)))
    with pytest.raises(ValueError):
        NetworkSpec(16, 3, 5, (Conv(4), ReLU(), Dense(7)))


def test_zero_network_is_uniform():
    p = zero_params(NetworkSpec())
    probs = forward(p, np.random.default_rng(0).random((30, 40, 3)))
    assert np.allclose(probs, 1 / 5)


@given(st.integers(0, 2**32), st.integers(8, 48), st.integers(8, 48))
@settings(max_examples=15, deadline=None)
def test_probabilities_normalised(seed, h, w):
    s = SeededStream(seed)
    p = init_params(small_spec(16), s.child("p"))
    probs = forward(p, s.uniform((h, w, 3)))
    assert probs.shape == (N_CLASSES,)
    assert (probs >= 0).all()
    assert abs(probs.sum() - 1.0) <= 1e-6


def test_non_finite_weights_raise(small):
    bad = small.copy()
    bad.tensors[0][0, 0, 0, 0] = np.nan
    with pytest.raises(NumericError):
        forward(bad, np.zeros((16, 16, 3)))


def test_loss_examples():
    assert loss(np.array([1.0, 0, 0, 0, 0]), 0) == 0.0
    assert loss(np.full(5, 0.2), 3) == pytest.approx(math.log(5))
    p = np.array([math.exp(-1), 0.2, 0.2, 0.2, 0.8 - math.exp(-1)])
    assert loss(p, 0) == pytest.approx(1.0)
    assert np.isfinite(loss(np.array([0.0, 1, 0, 0, 0]), 0))


def test_softmax_stable_for_large_logits():
    p = softmax(np.array([[1000.0, 0, -1000, 0, 0]]))
    assert np.isfinite(p).all() and p[0, 0] == pytest.approx(1.0)


def test_zero_network_bias_gradient():
    # all logits equal -> dL/db_last = softmax - onehot = 0.2 - [1 if true]
    p = zero_params(small_spec(16), np.float64)
    g = backward(p, np.zeros((16, 16, 3)), 2)
    expected = np.full(5, 0.2)
    expected[2] -= 1.0
    assert np.allclose(g.param_grads[-1], expected)
    assert np.isfinite(g.input_grad).all()
    assert g.input_grad.shape == (16, 16, 3)


def test_input_grad_matches_image_resolution(small):
    g = backward(small, np.random.default_rng(1).random((23, 31, 3)), 1)
    assert g.input_grad.shape == (23, 31, 3)
    assert [a.shape for a in g.param_grads] == [t.shape for t in small.tensors]


def test_duplicated_batch_gives_same_mean_gradient(small):
    x = to_input(np.random.default_rng(4).random((16, 16, 3)), 16, np.float64)[None]
    l1, g1, dx1 = batch_loss_and_grads(small, x, np.array([3]))
    l2, g2, dx2 = batch_loss_and_grads(small, np.concatenate([x, x]), np.array([3, 3]))
    # summed loss over two copies = 2x, so the per-copy mean matches and each copy's dx halves
    assert l2 == pytest.approx(l1)
    for a, b in zip(g1, g2):
        assert np.allclose(a, b)
    assert np.allclose(dx2[0] * 2, dx1[0])


def test_label_smoothing_changes_only_gradients(small):
    x = to_input(np.random.default_rng(5).random((16, 16, 3)), 16, np.float64)[None]
    l0, g0, _ = batch_loss_and_grads(small, x, np.array([1]))
    l1, g1, _ = batch_loss_and_grads(small, x, np.array([1]), 0.1)
    assert l0 == l1
    assert not np.allclose(g0[-1], g1[-1])


@pytest.mark.parametrize("seed", range(5))
def test_grad_check_small_network(seed):
    s = SeededStream(seed)
    p = init_params(small_spec(16), s.child("p"), np.float64)
    img = s.child("x").uniform((16, 16, 3))
    assert grad_check(p, img, seed % 5, n_coords=80, stream=s.child("fd")) < 1e-3


def test_grad_check_default_network_float32_params():
    s = SeededStream(11)
    p = init_params(NetworkSpec(), s.child("p"))  # float32, checked in float64
    img = s.child("x").uniform((40, 40, 3))
    assert grad_check(p, img, 0, n_coords=60, stream=s.child("fd")) < 1e-3


def test_negated_gradient_gives_error_two(small):
    img = np.random.default_rng(6).random((16, 16, 3))
    g = backward(small, img, 2)
    neg = Gradient([-t for t in g.param_grads], -g.input_grad)
    assert grad_check(small, img, 2, n_coords=40, grad=neg) == pytest.approx(2.0, abs=1e-3)


def test_step_size_sweep_has_interior_minimum():
    # truncation error dominates at large h, float64 round-off at tiny h
    s = SeededStream(1)
    p = init_params(small_spec(16), s.child("init"), np.float64)
    img = s.child("x").uniform((16, 16, 3))
    hs = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7)
    errs = [grad_check(p, img, 1, h=h, n_coords=60, stream=SeededStream(7)) for h in hs]
    best = int(np.argmin(errs))
    assert 0 < best < len(hs) - 1
    # over the coarse part of the sweep truncation error shrinks with h
    assert errs[0] > errs[1] > errs[2]
