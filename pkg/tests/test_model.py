import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from peerflow.model import (
    _forward_cache,
    ModelSpec,
    empirical_ntk,
    flatten,
    forward,
    init_params,
    jacobian,
    unflatten,
    vjp,
)


def central_difference_jacobian(spec, theta, X, h=1e-6):
    out = []
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        out.append((forward(spec, theta + e, X) - forward(spec, theta - e, X)).reshape(-1) / (2 * h))
    return np.stack(out, axis=1)


@st.composite
def small_specs(draw):
    n_layers = draw(st.integers(1, 3))
    widths = tuple(draw(st.lists(st.integers(1, 5), min_size=n_layers + 1, max_size=n_layers + 1)))
    hidden = draw(st.lists(st.sampled_from(["sigmoid", "relu", "identity"]), min_size=n_layers - 1, max_size=n_layers - 1))
    s_w = draw(st.floats(0.25, 2.0))
    s_b = draw(st.floats(0.0, 1.0))
    return ModelSpec(widths, tuple(hidden) + ("identity",), s_w, s_b)


def test_parameter_counts():
    assert ModelSpec.mlp((2, 256, 1)).num_params == 1025
    assert ModelSpec.mlp((2, 64, 1)).num_params == 257
    assert ModelSpec.affine(784).num_params == 785
    assert ModelSpec.mlp((3, 4, 5, 2)).num_params == 16 + 25 + 12


def test_final_layer_must_be_identity():
    with pytest.raises(ValueError, match="identity"):
        ModelSpec((2, 3, 1), ("sigmoid", "sigmoid"))


def test_unknown_activation():
    with pytest.raises(ValueError, match="tanh"):
        ModelSpec((2, 3, 1), ("tanh", "identity"))


def test_init_is_deterministic_per_seed():
    spec = ModelSpec.mlp((2, 16, 1))
    assert np.array_equal(init_params(spec, 3), init_params(spec, 3))
    assert not np.array_equal(init_params(spec, 3), init_params(spec, 4))


def test_init_is_standard_normal():
    theta = init_params(ModelSpec.mlp((100, 1000, 1)), seed=0)
    assert theta.size > 100_000
    assert abs(theta.mean()) < 0.02
    assert abs(theta.std() - 1.0) < 0.02


def test_flatten_round_trip():
    spec = ModelSpec.mlp((3, 4, 2))
    theta = init_params(spec, 1)
    layers = unflatten(spec, theta)
    assert [W.shape for W, _ in layers] == [(4, 3), (2, 4)]
    assert np.array_equal(flatten(layers), theta)


def test_ntk_scaling_on_identity_layer():
    # s_w / sqrt(4) = 1 when s_w = 2, so an identity weight matrix passes x through
    spec = ModelSpec((4, 4), ("identity",), s_w=2.0, s_b=0.5)
    theta = flatten([(np.eye(4), np.zeros(4))])
    x = np.array([1.0, -2.0, 3.0, 0.5])
    assert np.allclose(forward(spec, theta, x), x, atol=1e-15)


def test_forward_single_input_matches_batch():
    spec = ModelSpec.mlp((2, 8, 3))
    theta = init_params(spec, 0)
    X = np.random.default_rng(0).standard_normal((5, 2))
    batch = forward(spec, theta, X)
    assert batch.shape == (5, 3)
    assert np.allclose(forward(spec, theta, X[2]), batch[2], rtol=0, atol=1e-15)


def test_forward_hand_computed_sigmoid_net():
    spec = ModelSpec.mlp((1, 1, 1), "sigmoid", s_w=1.0, s_b=0.1)
    # W0 = 2, b0 = 1, W1 = 3, b1 = -1, x = 0.5
    theta = np.array([2.0, 1.0, 3.0, -1.0])
    h = 1.0 / (1.0 + np.exp(-(2.0 * 0.5 + 0.1)))
    assert forward(spec, theta, np.array([0.5]))[0] == pytest.approx(3.0 * h - 0.1, abs=1e-15)


def test_affine_jacobian_rows():
    spec = ModelSpec.affine(3)
    X = np.array([[1.0, 2.0, 3.0], [-1.0, 0.0, 4.0]])
    J = jacobian(spec, init_params(spec, 0), X)
    assert np.array_equal(J, np.hstack([X, np.ones((2, 1))]))


def test_deep_linear_jacobian_matches_product_formula():
    spec = ModelSpec((2, 2, 2), ("identity", "identity"), s_w=1.5, s_b=0.3)
    theta = init_params(spec, 7)
    (W1, b1), (W2, b2) = unflatten(spec, theta)
    c = 1.5 / np.sqrt(2)
    x = np.array([0.4, -1.2])
    h = c * W1 @ x + 0.3 * b1
    expected = np.zeros((2, theta.size))
    for m in range(2):
        dW1 = c * np.outer(c * W2[m], x)  # d f_m / d W1[i, j] = c W2[m, i] c x_j
        db1 = c * W2[m] * 0.3
        dW2 = np.zeros((2, 2))
        dW2[m] = c * h
        db2 = np.zeros(2)
        db2[m] = 0.3
        expected[m] = np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2])
    assert np.allclose(jacobian(spec, theta, x), expected, rtol=0, atol=1e-14)


@given(small_specs(), st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_jacobian_matches_finite_differences(spec, seed):
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal(spec.num_params)
    X = rng.standard_normal((3, spec.n_inputs))
    # central differences are unreliable within h of a relu kink
    pre = _forward_cache(spec, theta, X)[1]
    assume(all(np.abs(z).min() > 1e-4 for z, a in zip(pre, spec.activations) if a == "relu"))
    J = jacobian(spec, theta, X)
    Jfd = central_difference_jacobian(spec, theta, X)
    assert np.abs(J - Jfd).max() <= 1e-5 * max(1.0, np.abs(Jfd).max())


@given(small_specs(), st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_vjp_agrees_with_jacobian(spec, seed):
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal(spec.num_params)
    X = rng.standard_normal((4, spec.n_inputs))
    G = rng.standard_normal((4, spec.n_outputs))
    assert np.allclose(vjp(spec, theta, X, G), jacobian(spec, theta, X).T @ G.reshape(-1), atol=1e-12)


def test_jacobian_row_layout_is_sample_major():
    spec = ModelSpec.mlp((2, 3, 2))
    theta = init_params(spec, 0)
    X = np.random.default_rng(1).standard_normal((3, 2))
    J = jacobian(spec, theta, X)
    assert J.shape == (6, spec.num_params)
    assert np.allclose(J[2:4], jacobian(spec, theta, X[1]), atol=1e-15)


def test_affine_ntk_is_linear_kernel_plus_one():
    spec = ModelSpec.affine(4)
    rng = np.random.default_rng(2)
    X, X2 = rng.standard_normal((3, 4)), rng.standard_normal((5, 4))
    K = empirical_ntk(spec, init_params(spec, 0), X, X2)
    assert np.allclose(K, X @ X2.T + 1.0, atol=1e-13)


@given(small_specs(), st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_ntk_is_symmetric_psd(spec, seed):
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal(spec.num_params)
    K = empirical_ntk(spec, theta, rng.standard_normal((4, spec.n_inputs)))
    assert np.allclose(K, K.T, atol=1e-12)
    assert np.linalg.eigvalsh(0.5 * (K + K.T)).min() >= -1e-10 * max(1.0, np.abs(K).max())
