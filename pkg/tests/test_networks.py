from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reference_layers as ref
from pianogan.binary_neurons import dbn_forward
from pianogan.errors import ConfigurationError, DimensionError
from pianogan.networks import (
    build_discriminator,
    build_generator,
    build_refiner,
    chroma_feature,
    count_parameters,
    onset_feature,
    plan_for,
    scaled,
)
from pianogan.pianoroll import DESK_RESOLUTION, FULL_RESOLUTION, Resolution
from pianogan.tensor_core import Tensor, finite_diff_check, sum_


def _triples(specs):
    return {name: [s.triple for s in chain] for name, chain in specs.items()}


@pytest.fixture(scope="module")
def full_generator():
    return build_generator(FULL_RESOLUTION, rng=np.random.default_rng(0))


@pytest.fixture(scope="module")
def full_discriminator():
    return build_discriminator(FULL_RESOLUTION, rng=np.random.default_rng(0))


def test_full_generator_layers(full_generator):
    assert _triples(full_generator.layer_specs) == ref.GENERATOR
    assert full_generator.seed_shape == ref.GENERATOR_SEED_SHAPE
    assert full_generator.extent_trace["shared"][0] == (3, 1, 1)
    assert [e[1] for e in full_generator.extent_trace["shared"]] == [1, 1, 4, 4, 16, 16]
    assert full_generator.extent_trace["substream1"][-1] == (4, 96, 84)


def test_full_generator_output_shape(full_generator):
    out = full_generator(Tensor(np.random.default_rng(1).normal(size=(1, 128))))
    assert out.shape == (1, 4, 96, 84, 8)
    assert out.data.min() > 0 and out.data.max() < 1


def test_full_discriminator_layers(full_discriminator):
    specs = _triples(full_discriminator.layer_specs)
    assert {k: specs[k] for k in ref.DISCRIMINATOR} == ref.DISCRIMINATOR
    assert specs["onset"] == ref.ONSET
    assert specs["chroma"] == ref.CHROMA


def test_full_discriminator_stream_inputs(full_discriminator):
    x = Tensor(np.zeros((1,) + FULL_RESOLUTION.shape))
    feats = full_discriminator.stream_inputs(x)
    assert feats["onset"].shape[1:] == ref.ONSET_INPUT
    assert feats["chroma"].shape[1:] == ref.CHROMA_INPUT
    assert full_discriminator(x).shape == (1, 1)


def test_ablated_discriminators():
    d2 = build_discriminator(FULL_RESOLUTION, variant="ablated_II", rng=np.random.default_rng(0))
    assert _triples(d2.layer_specs) == ref.ABLATED_II
    d1 = build_discriminator(FULL_RESOLUTION, variant="ablated_I", rng=np.random.default_rng(0))
    full = build_discriminator(FULL_RESOLUTION, rng=np.random.default_rng(0))
    groups = lambda d: {n.split("/")[1] for n in d.parameters()}  # noqa: E731
    assert groups(full) - groups(d1) == {"onset", "chroma"}
    assert groups(d1) <= groups(full)


def test_scaled_channels():
    g = build_generator(FULL_RESOLUTION, Fraction(1, 8))
    assert [s.filters for s in g.shared_specs] == [32, 16, 16, 8, 8]
    assert g.seed_shape[-1] == 64
    assert scaled(64, "1/8") == 8


def test_desk_plan_chains():
    p = plan_for(DESK_RESOLUTION)
    g = build_generator(DESK_RESOLUTION, Fraction(1, 8))
    d = build_discriminator(DESK_RESOLUTION, Fraction(1, 8))
    assert g.extent_trace["substream2"][-1] == (1, 24, 24)
    assert d.extent_trace["merge"][-1] == (p.bar_seed, 1, 1)


def test_extent_mismatch_is_configuration_error():
    with pytest.raises(ConfigurationError):
        plan_for(Resolution(pitches=30))
    with pytest.raises(ConfigurationError):
        build_generator(Resolution(bars=1, steps_per_beat=5, beats_per_bar=2, pitches=12, tracks=("a",)),
                        plan=plan_for(FULL_RESOLUTION))


def test_generator_determinism_and_bounds():
    z = Tensor(np.random.default_rng(5).normal(size=(3, 128)))
    g1 = build_generator(DESK_RESOLUTION, Fraction(1, 8), rng=np.random.default_rng(2))
    g2 = build_generator(DESK_RESOLUTION, Fraction(1, 8), rng=np.random.default_rng(2))
    a, b = g1(z), g2(z)
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_array_equal(a.data, g1(z).data)
    assert a.data.min() > 0 and a.data.max() < 1
    with pytest.raises(DimensionError):
        g1(Tensor(np.zeros((1, 7))))


def test_generator_mean_output_gradient():
    rng = np.random.default_rng(3)
    g = build_generator(DESK_RESOLUTION, Fraction(1, 8), rng=rng)
    z = Tensor(rng.normal(size=(2, 128)), requires_grad=True)
    res = finite_diff_check(lambda: g(z, training=False).mean(), [z], rng=rng, n_probe=10)
    assert res.passed(1e-4), res


def test_refiner_preserves_shape_and_is_binary():
    r = build_refiner(FULL_RESOLUTION, 64, rng=np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).random((1,) + FULL_RESOLUTION.shape))
    out = r(x, training=False)
    assert out.shape == (1, 4, 96, 84, 8)
    assert set(np.unique(out.data)) <= {0.0, 1.0}


def test_zero_init_refiner_reduces_to_threshold(rng):
    r = build_refiner(DESK_RESOLUTION, 4, rng=rng)
    x = rng.uniform(0.01, 0.99, (3,) + DESK_RESOLUTION.shape)
    out = r(Tensor(x), training=False)
    np.testing.assert_array_equal(out.data, dbn_forward(np.log(x) - np.log(1 - x)))
    np.testing.assert_array_equal(out.data, (x >= 0.5).astype(float))


def test_refiner_gradient_reaches_convolutions(rng):
    r = build_refiner(DESK_RESOLUTION, 4, rng=rng, zero_init=False)
    x = Tensor(rng.uniform(0.1, 0.9, (2,) + DESK_RESOLUTION.shape))
    sum_(r(x, training=True) * rng.normal(size=x.shape)).backward()
    kernels = [p for n, p in r.named_parameters() if n.endswith("kernel")]
    assert all(np.linalg.norm(p.grad) > 0 for p in kernels)


def _roll(n_steps=12, pitches=4):
    return np.zeros((1, 1, n_steps, pitches, 1))


def test_onset_feature_examples():
    x = _roll()
    x[0, 0, 5:8, 2, 0] = 1
    f = onset_feature(Tensor(x)).data[0, 0, :, 0, 0]
    expected = np.zeros(12)
    expected[5], expected[8] = 1, -1
    np.testing.assert_array_equal(f, expected)
    assert not onset_feature(Tensor(_roll())).data.any()
    x = _roll()
    x[0, 0, 0:2, [0, 3], 0] = 1
    assert onset_feature(Tensor(x)).data[0, 0, 0, 0, 0] == 2


def test_chroma_feature_examples():
    x = np.zeros((1,) + FULL_RESOLUTION.shape)
    x[0, 0, 0:24, 36, 1] = 1  # C4 with C1 at index 0
    c = chroma_feature(Tensor(x), 24).data
    assert c.shape == (1, 4, 4, 12, 8)
    assert c[0, 0, 0, 0, 1] == 24 and c.sum() == 24
    with pytest.raises(ConfigurationError):
        chroma_feature(Tensor(np.zeros((1, 1, 10, 12, 1))), 3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_features_are_linear(seed, a, b):
    r = np.random.default_rng(seed)
    x, y = r.random((2, 1, 1, 12, 24, 2))
    for f in (onset_feature, lambda t: chroma_feature(t, 3)):
        np.testing.assert_allclose(f(Tensor(a * x + b * y)).data, a * f(Tensor(x)).data + b * f(Tensor(y)).data,
                                   atol=1e-10)


def test_discriminator_input_gradient(rng):
    d = build_discriminator(DESK_RESOLUTION, Fraction(1, 8), rng=rng)
    x = Tensor(rng.random((2,) + DESK_RESOLUTION.shape), requires_grad=True)
    res = finite_diff_check(lambda: sum_(d(x)), [x], rng=rng, n_probe=20)
    assert res.passed(1e-4), res


def test_parameter_count_scales():
    small = count_parameters(build_discriminator(DESK_RESOLUTION, Fraction(1, 8)))
    large = count_parameters(build_discriminator(DESK_RESOLUTION, Fraction(1, 4)))
    assert 0 < small < large
