import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pianogan.binary_neurons import (
    BinaryNeuronLayer,
    SlopeSchedule,
    anneal_slope,
    binary_neuron,
    dbn_forward,
    sbn_forward,
    sigmoid_adjusted_st_backward,
    st_backward,
)
from pianogan.tensor_core import Parameter, Tensor, sum_


def _sigma(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


@pytest.mark.parametrize("x, expected", [(2.0, 1.0), (-3.0, 0.0), (0.0, 1.0)])
def test_dbn_forward(x, expected):
    assert dbn_forward(np.array([x]))[0] == expected


def test_sbn_injected_draws():
    assert sbn_forward(np.array([0.0]), np.array([0.25]))[0] == 1.0
    assert sbn_forward(np.array([0.0]), np.array([0.75]))[0] == 0.0


def test_sbn_needs_one_draw_per_element():
    with pytest.raises(ValueError):
        sbn_forward(np.zeros(3), np.zeros(2))


def test_sbn_monte_carlo_rate():
    rng = np.random.default_rng(7)
    x = np.ones(100_000)
    assert abs(sbn_forward(x, rng.random(x.shape)).mean() - _sigma(1.0)) < 0.005


def test_st_backward_identity():
    assert st_backward(1.0) == 1.0
    np.testing.assert_array_equal(st_backward([-2.0, 0.5]), [-2.0, 0.5])


def test_sigmoid_adjusted_examples():
    assert sigmoid_adjusted_st_backward(0.0, 1.0, 1.0) == 0.25
    assert sigmoid_adjusted_st_backward(0.0, 1.0, 2.0) == 0.5
    oracle = 3.0 * _sigma(2.0) * (1.0 - _sigma(2.0))
    assert sigmoid_adjusted_st_backward(2.0, 3.0, 1.0) == pytest.approx(oracle, abs=1e-12)
    assert round(oracle, 4) == 0.3150


def test_sigmoid_adjusted_rejects_bad_slope():
    with pytest.raises(ValueError):
        sigmoid_adjusted_st_backward(0.0, 1.0, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-30, 30), st.floats(-5, 5), st.floats(0.1, 10))
def test_sigmoid_adjusted_matches_closed_form(x, upstream, slope):
    s = _sigma(slope * x)
    assert sigmoid_adjusted_st_backward(x, upstream, slope) == pytest.approx(
        upstream * slope * s * (1 - s), rel=1e-12, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50, allow_nan=False))
def test_forward_outputs_are_binary(x):
    assert dbn_forward(np.array([x]))[0] in (0.0, 1.0)
    assert sbn_forward(np.array([x]), np.array([0.5]))[0] in (0.0, 1.0)


def test_slope_schedule():
    s = SlopeSchedule()
    assert s.slope == 1.0
    s = anneal_slope(anneal_slope(s))
    assert s.slope == pytest.approx(1.21, abs=1e-12)
    for _ in range(8):
        s = anneal_slope(s)
    assert s.slope == pytest.approx(2.5937424601, abs=1e-9)


def test_forward_ignores_slope(rng):
    x = rng.normal(size=50)
    a = binary_neuron(Tensor(x), "deterministic", slope=1.0)
    b = binary_neuron(Tensor(x), "deterministic", slope=7.0)
    np.testing.assert_array_equal(a.data, b.data)


@pytest.mark.parametrize("estimator", ["st", "sigmoid_adjusted_st"])
@pytest.mark.parametrize("kind", ["dbn", "sbn"])
def test_gradient_flows_to_parameters(rng, kind, estimator):
    w = Parameter(rng.normal(size=(4, 3)))
    x = Tensor(rng.normal(size=(5, 4)))
    layer = BinaryNeuronLayer(kind, estimator, rng=np.random.default_rng(0))
    out = layer(x @ w)
    assert set(np.unique(out.data)) <= {0.0, 1.0}
    sum_(out * rng.normal(size=out.shape)).backward()
    assert np.linalg.norm(w.grad) > 0


def test_sbn_gradient_independent_of_draws(rng):
    x = Parameter(rng.normal(size=20))
    grads = []
    for seed in (0, 1):
        x.zero_grad()
        v = np.random.default_rng(seed).random(20)
        sum_(binary_neuron(x, "sbn", 1.3, v=v)).backward()
        grads.append(x.grad.copy())
    np.testing.assert_array_equal(grads[0], grads[1])
    np.testing.assert_allclose(grads[0], sigmoid_adjusted_st_backward(x.data, 1.0, 1.3), rtol=1e-15)


def test_layer_anneal_changes_only_backward(rng):
    layer = BinaryNeuronLayer("dbn")
    layer.anneal()
    assert layer.slope == pytest.approx(1.1)


def test_layer_rejects_unknown_kind():
    with pytest.raises(ValueError):
        BinaryNeuronLayer("ternary")
    with pytest.raises(ValueError):
        BinaryNeuronLayer("dbn", "reinforce")
