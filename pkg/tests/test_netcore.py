import math

import numpy as np
import pytest

from deltaboot import netcore
from deltaboot.errors import ShapeError
from deltaboot.netcore import (
    Conv3x3, Dataset, Dense, Input, MaxPool2x2, NetworkSpec, ParamVector, ReLU, Softmax,
)
from oracles import fd_gradient, random_inputs, random_labels, random_tiny_spec, ref_cost, ref_forward, rel_err

GOLDEN_SPEC = NetworkSpec((Input((1, 6, 6)), Conv3x3(1, 2), MaxPool2x2(), ReLU(), Dense(8, 3), Softmax()), 3, 0.01)
# ref_forward on default_rng(0): w ~ N(0, 0.5^2), then x ~ U(0, 1)
GOLDEN_OUT = [0.3224671928381526, 0.2786803788794997, 0.3988524282823477]


def test_param_count_and_offsets():
    spec = GOLDEN_SPEC
    assert spec.num_params == 2 * 9 + 2 + 8 * 3 + 3
    spans = sorted(spec.offsets.values())
    assert spans[0][0] == 0 and sum(n for _, n in spans) == spec.num_params
    w = np.arange(spec.num_params, dtype=float)
    W, b = spec.unpack(w)[1]
    assert W.shape == (2, 1, 3, 3) and b.tolist() == [18.0, 19.0]


def test_reference_specs():
    mnist = netcore.mnist_reference_spec()
    cifar = netcore.cifar_reference_spec()
    dense_in = [l.n_in for l in mnist.layers if isinstance(l, Dense)][0]
    assert dense_in == 576
    assert [l.n_in for l in cifar.layers if isinstance(l, Dense)][0] == 1024
    assert mnist.num_params == 93322
    assert cifar.num_params == 122570


def test_param_vector_rejects_gaps():
    with pytest.raises(ShapeError):
        ParamVector(np.zeros(5), {1: (0, 2), 3: (3, 2)})
    with pytest.raises(ShapeError):
        ParamVector(np.zeros(5), {1: (0, 4)})
    assert len(ParamVector(np.zeros(5), {1: (0, 2), 3: (2, 3)})) == 5


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 3)), np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 3)), np.eye(3))
    d = Dataset(np.zeros((3, 2)), np.eye(3))
    assert len(d) == 3 and d.num_classes == 3


def test_shape_error_names_layer():
    with pytest.raises(ShapeError) as exc:
        NetworkSpec((Input((4,)), Dense(5, 2), Softmax()), 2)
    assert exc.value.layer == 1
    with pytest.raises(ShapeError) as exc:
        NetworkSpec((Input((1, 4, 4)), Conv3x3(2, 1), Dense(4, 2), Softmax()), 2)
    assert exc.value.layer == 1
    with pytest.raises(ShapeError) as exc:
        netcore.forward(GOLDEN_SPEC, np.zeros(GOLDEN_SPEC.num_params), np.zeros((1, 5, 5)))
    assert exc.value.layer == 0


def test_zero_weights_give_uniform_output():
    spec = netcore.dense_spec(4, [5], 3)
    x = np.random.default_rng(1).normal(size=4)
    np.testing.assert_allclose(netcore.forward(spec, np.zeros(spec.num_params), x), np.full(3, 1 / 3), rtol=0, atol=1e-15)


def test_equal_logit_symmetry():
    spec = NetworkSpec((Input((1,)), Dense(1, 2), Softmax()), 2)
    for b in (-3.0, 0.0, 7.5):
        for x in (-2.0, 0.0, 9.0):
            assert netcore.forward(spec, np.array([0.0, 0.0, b, b]), np.array([x])).tolist() == [0.5, 0.5]


def test_forward_matches_golden():
    rng = np.random.default_rng(0)
    w = rng.normal(0, 0.5, GOLDEN_SPEC.num_params)
    x = rng.uniform(0, 1, (1, 6, 6))
    np.testing.assert_allclose(netcore.forward(GOLDEN_SPEC, w, x), GOLDEN_OUT, rtol=1e-12)


def test_batched_forward_matches_single():
    rng = np.random.default_rng(3)
    spec = GOLDEN_SPEC
    w = rng.normal(0, 0.5, spec.num_params)
    xs = rng.normal(size=(7, 1, 6, 6))
    batch = netcore.predict(spec, w, xs, batch_size=3)
    for x, p in zip(xs, batch):
        np.testing.assert_allclose(p, np.float64(ref_forward(spec, w, x)), rtol=1e-12)


def test_cost_uniform_is_log_T():
    spec = NetworkSpec((Input((3,)), Dense(3, 10), Softmax()), 10, reg_rate=0.0)
    data = Dataset(np.ones((4, 3)), np.eye(10)[[0, 3, 5, 9]])
    assert netcore.cost(spec, np.zeros(spec.num_params), data) == pytest.approx(math.log(10), abs=1e-12)


def test_cost_perfect_prediction_is_zero():
    spec = NetworkSpec((Input((1,)), Dense(1, 2), Softmax()), 2, reg_rate=0.0)
    w = np.array([0.0, 0.0, 1000.0, -1000.0])
    data = Dataset(np.ones((3, 1)), np.tile([1.0, 0.0], (3, 1)))
    assert netcore.cost(spec, w, data) == 0.0


def test_cost_regularization_only_unit_norm_weights():
    spec = NetworkSpec((Input((1,)), Dense(1, 2), Softmax()), 2, reg_rate=0.01)
    w = np.array([1.0, -1.0, 1.0, -1.0])  # ||w||^2 = 4
    data = Dataset(np.full((1, 1), 1e6), np.array([[1.0, 0.0]]))
    assert netcore.cost(spec, w, data) == pytest.approx(0.02, abs=1e-12)


def test_cost_clamps_and_flags():
    spec = NetworkSpec((Input((1,)), Dense(1, 2), Softmax()), 2, reg_rate=0.0)
    w = np.array([0.0, 0.0, -1000.0, 1000.0])
    data = Dataset(np.ones((2, 1)), np.tile([1.0, 0.0], (2, 1)))
    c, n = netcore.cost_details(spec, w, data)
    assert n == 2 and c == pytest.approx(-math.log(netcore.CE_FLOOR))
    assert np.all(np.isfinite(netcore.grad_cost(spec, w, data)))


def test_regularization_only_gradient():
    spec = NetworkSpec((Input((1,)), Dense(1, 2), Softmax()), 2, reg_rate=1.0)
    w = np.array([1.0, -1.0, 0.5, -0.5])
    data = Dataset(np.full((3, 1), 1e4), np.tile([1.0, 0.0], (3, 1)))
    np.testing.assert_allclose(netcore.grad_cost(spec, w, data), w, atol=1e-12)


def test_saturated_per_example_gradient_is_zero():
    spec = NetworkSpec((Input((1,)), Dense(1, 2), Softmax()), 2, reg_rate=0.0)
    w = np.array([0.0, 0.0, 800.0, -800.0])
    g = netcore.per_example_grad(spec, w, np.array([1.0]), np.array([1.0, 0.0]))
    assert np.all(g == 0.0)


@pytest.mark.parametrize("kind,seed", [("dense", 0), ("dense", 1), ("conv", 2), ("conv", 3)])
def test_grad_cost_matches_finite_differences(kind, seed):
    rng = np.random.default_rng(seed)
    spec = random_tiny_spec(rng, kind)
    w = rng.normal(0, 0.5, spec.num_params)
    x = random_inputs(rng, spec, 4)
    y = random_labels(rng, 4, spec.num_classes)
    fd = fd_gradient(lambda v: ref_cost(spec, v, x, y), w)
    assert rel_err(netcore.grad_cost(spec, w, Dataset(x, y)), fd).max() <= 1e-4


def test_per_example_and_sensitivity_match_finite_differences():
    rng = np.random.default_rng(11)
    spec = random_tiny_spec(rng, "conv")
    w = rng.normal(0, 0.5, spec.num_params)
    x = random_inputs(rng, spec, 1)[0]
    y = random_labels(rng, 1, spec.num_classes)[0]
    fd = fd_gradient(lambda v: ref_cost(spec, v, x[None], y[None]), w)
    assert rel_err(netcore.per_example_grad(spec, w, x, y), fd).max() <= 1e-4
    F = netcore.sensitivity(spec, w, x)
    assert F.shape == (spec.num_classes, spec.num_params)
    for i in range(spec.num_classes):
        fd_i = fd_gradient(lambda v: ref_forward(spec, v, x)[i], w)
        assert rel_err(F[i], fd_i).max() <= 1e-4


def test_gradient_of_mean_is_mean_of_gradients():
    rng = np.random.default_rng(5)
    spec = random_tiny_spec(rng, "conv")
    w = rng.normal(0, 0.5, spec.num_params)
    x = random_inputs(rng, spec, 3)
    y = random_labels(rng, 3, spec.num_classes)
    full = netcore.grad_cost(spec, w, Dataset(x, y))
    rows = netcore.per_example_grads(spec, w, x, y, batch_size=2)
    assert np.abs(rows.mean(0) - full).max() <= 1e-10 * max(np.abs(full).max(), 1e-8)
    c, g = netcore.cost_and_grad(spec, w, x, y)
    assert c == pytest.approx(netcore.cost(spec, w, Dataset(x, y)), rel=1e-14)
    np.testing.assert_allclose(g, full, rtol=1e-12, atol=1e-15)


def test_sensitivity_columns_sum_to_zero():
    rng = np.random.default_rng(6)
    spec = random_tiny_spec(rng, "dense")
    w = rng.normal(0, 1.0, spec.num_params)
    F = netcore.sensitivities(spec, w, random_inputs(rng, spec, 5))
    assert np.abs(F.sum(axis=1)).max() <= 1e-10


def test_sensitivity_symmetry_at_zero_weights():
    spec = netcore.dense_spec(3, [4], 3)
    F = netcore.sensitivity(spec, np.zeros(spec.num_params), np.array([0.3, -1.0, 2.0]))
    i, s, nw, nb = spec.blocks[-1]
    Wrows = [F[k, s : s + nw].reshape(4, 3) for k in range(3)]
    brows = [F[k, s + nw : s + nw + nb] for k in range(3)]
    perm = [1, 0, 2]
    # swapping classes 0 and 1 swaps the corresponding columns of the last block
    np.testing.assert_allclose(Wrows[1], Wrows[0][:, perm], atol=1e-15)
    np.testing.assert_allclose(brows[1], brows[0][perm], atol=1e-15)
    assert brows[0][0] == pytest.approx(1 / 3 * (1 - 1 / 3))


def test_determinism():
    rng = np.random.default_rng(8)
    spec = GOLDEN_SPEC
    w = rng.normal(0, 0.5, spec.num_params)
    x = rng.normal(size=(6, 1, 6, 6))
    y = random_labels(rng, 6, 3)
    a = netcore.per_example_grads(spec, w, x, y)
    b = netcore.per_example_grads(spec, w, x, y)
    assert np.array_equal(a, b)


def test_accuracy_and_one_hot():
    y = netcore.one_hot([2, 0, 1], 3)
    assert y.tolist() == [[0, 0, 1], [1, 0, 0], [0, 1, 0]]
    spec = NetworkSpec((Input((3,)), Dense(3, 3), Softmax()), 3, 0.0)
    w = np.concatenate([np.eye(3).ravel(), np.zeros(3)])
    data = Dataset(np.eye(3)[[2, 0, 1]] * 5, y)
    assert netcore.accuracy(spec, w, data) == 1.0
