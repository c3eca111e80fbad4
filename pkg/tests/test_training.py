import math

import numpy as np
import pytest

from pianogan.config import RunConfig
from pianogan.errors import ConfigurationError, ProvenanceError
from pianogan.networks import build_discriminator
from pianogan.pianoroll import DESK_RESOLUTION
from pianogan.synth import corpus_array, synth_corpus
from pianogan.tensor_core import Parameter, Tensor, finite_diff_check, grad, matmul, mean, reshape, sum_
from pianogan.training import (
    MetricTrace,
    RngStreams,
    Trainer,
    critic_loss,
    generator_loss,
    gradient_penalty,
    safe_sqrt,
    train_end_to_end,
    train_joint,
    train_two_stage,
    trainer_from_checkpoint,
)

SHAPE = (3, 2, 4)


def tiny(**changes) -> RunConfig:
    base = RunConfig(steps_stage1=3, steps_stage2=3, n_critic=1, batch_size_stage1=4, batch_size_default=4,
                     synth_samples=16, log_every=1, eval_every=2, eval_samples=4, checkpoint_every=2)
    return base.replace(**changes)


@pytest.fixture(scope="module")
def corpus():
    return corpus_array(synth_corpus(0, 16, DESK_RESOLUTION))


def _linear(w):
    w = np.asarray(w, dtype=np.float64)
    return lambda x: reshape(matmul(reshape(x, (x.shape[0], -1)), Tensor(w.reshape(-1, 1))), (x.shape[0],))


def _unit(rng):
    w = rng.normal(size=int(np.prod(SHAPE)))
    return w / np.linalg.norm(w)


# -- objectives ----------------------------------------------------------------
def test_constant_critic_loss_is_gp_weight(rng):
    real, fake = rng.random((4,) + SHAPE), rng.random((4,) + SHAPE)
    const = lambda x: sum_(x * 0.0, axis=(1, 2, 3)) + 3.0  # noqa: E731
    assert critic_loss(const, real, fake, 10.0).item() == pytest.approx(10.0, abs=1e-12)


def test_unit_linear_critic(rng):
    real, fake = rng.random((4,) + SHAPE), rng.random((4,) + SHAPE)
    w = _unit(rng)
    D = _linear(w)
    assert gradient_penalty(D, real, fake, rng.random(4)).item() < 1e-10
    expected = np.mean(fake.reshape(4, -1) @ w) - np.mean(real.reshape(4, -1) @ w)
    assert critic_loss(D, real, fake, 10.0).item() == pytest.approx(expected, abs=1e-10)
    assert abs(critic_loss(D, real, real, 10.0).item()) < 1e-10


def test_penalty_hand_gradients(rng):
    real, fake = rng.random((4,) + SHAPE), rng.random((4,) + SHAPE)
    e1 = np.zeros(int(np.prod(SHAPE)))
    e1[0] = 1.0
    assert gradient_penalty(_linear(2 * e1), real, fake, rng.random(4)).item() == pytest.approx(1.0, abs=1e-9)
    assert gradient_penalty(_linear(e1), real, fake, rng.random(4)).item() == pytest.approx(0.0, abs=1e-12)


def test_interpolation_endpoint(rng):
    real, fake = rng.random((3,) + SHAPE), rng.random((3,) + SHAPE)
    seen = []

    def D(x):
        seen.append(x.data.copy())
        return sum_(x * x, axis=(1, 2, 3))

    gradient_penalty(D, real, fake, np.ones(3))
    np.testing.assert_array_equal(seen[0], real)


def test_penalty_parameter_gradient(rng):
    D = build_discriminator(DESK_RESOLUTION, "1/8", rng=rng)
    real = rng.integers(0, 2, (2,) + DESK_RESOLUTION.shape).astype(float)
    fake = rng.random(real.shape)
    eps = rng.random(2)
    params = [p for _, p in D.named_parameters()]
    res = finite_diff_check(lambda: gradient_penalty(D, real, fake, eps), params, n_probe=2, rng=rng)
    assert res.passed(1e-4), res


def test_generator_loss():
    z = Parameter(np.ones((3, 2)))
    const = lambda x: sum_(x * 0.0, axis=1) + 2.5  # noqa: E731
    loss = generator_loss(const, z)
    assert loss.item() == -2.5
    (g,) = grad(loss, [z])
    assert not g.data.any()
    D = lambda x: sum_(x, axis=1)  # noqa: E731
    assert generator_loss(D, Tensor(np.full((2, 2), 2.0))).item() < generator_loss(D, Tensor(np.ones((2, 2)))).item()


def test_safe_sqrt_zero_gradient():
    x = Parameter(np.array([0.0, 4.0]))
    sum_(safe_sqrt(x)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.25])


# -- streams and trace ---------------------------------------------------------
def test_streams_are_independent_and_restorable():
    s = RngStreams(7)
    state = s.state()
    a = s["latent"].random(3)
    s.set_state(state)
    np.testing.assert_array_equal(s["latent"].random(3), a)
    assert not np.array_equal(RngStreams(7)["gp"].random(3), a)


def test_trace_rejects_going_back(tmp_path):
    t = MetricTrace()
    t.add(1, "QN", math.nan, "m", "s")
    t.add(2, "QN", 0.5, "m", "s")
    with pytest.raises(ValueError):
        t.add(1, "QN", 0.5, "m", "s")
    back = MetricTrace.read(t.write(tmp_path / "t.csv"))
    assert back.rows[1] == t.rows[1] and math.isnan(back.rows[0][2])


# -- strategies ----------------------------------------------------------------
def _params(module):
    return {k: p.data.copy() for k, p in module.named_parameters()}


def test_two_stage_freezes_generator(corpus, tmp_path):
    t = Trainer(tiny(), corpus, tmp_path)
    t.run(until_step=3)
    before = _params(t.generator)
    refiner_before = _params(t.refiner)
    batches = []
    t.on_fake = lambda stage, b: batches.append(stage)
    t.run()
    after = _params(t.generator)
    assert all(np.array_equal(before[k], after[k]) for k in before)
    assert any(not np.array_equal(refiner_before[k], v) for k, v in _params(t.refiner).items())
    assert set(batches) == {"refine"}
    assert t.state.provenance_checks == len(batches)
    steps = [r[0] for r in t.trace.rows]
    assert steps == sorted(steps)
    assert [s for s, _ in t.trace.values("QN")] == [2, 4, 6]
    assert (tmp_path / "checkpoints" / "pretrain_final.bgck").exists()
    assert (tmp_path / "checkpoints" / "refine_final.bgck").exists()


def test_joint_updates_generator(corpus):
    t = Trainer(tiny(strategy="joint"), corpus)
    t.run(until_step=3)
    before = _params(t.generator)
    t.run()
    assert any(not np.array_equal(before[k], v) for k, v in _params(t.generator).items())


def test_joint_stage_one_matches_two_stage(corpus):
    a = Trainer(tiny(strategy="joint"), corpus)
    b = Trainer(tiny(), corpus)
    a.run(until_step=3)
    b.run(until_step=3)
    assert [r[:4] for r in a.trace.rows] == [r[:4] for r in b.trace.rows]
    pa, pb = _params(a.generator), _params(b.generator)
    assert all(np.array_equal(pa[k], pb[k]) for k in pa)


def test_refiner_gradient_through_binary_neurons(corpus):
    t = Trainer(tiny(), corpus)
    fake = t.fake("refine", 4)
    loss = generator_loss(t.discriminator, fake)
    params = [p for _, p in t.refiner.named_parameters()]
    grads = grad(loss, params)
    assert sum(float(np.linalg.norm(g.data)) for g in grads) > 0


def test_end_to_end_is_binary_from_step_zero(corpus):
    t = Trainer(tiny(strategy="end_to_end"), corpus)
    stages = []

    def check(stage, batch):
        stages.append(stage)
        assert np.all((batch == 0) | (batch == 1))

    t.on_fake = check
    t.run(until_step=1)
    assert stages and set(stages) == {"single"}
    assert t.state.provenance_checks == len(stages)


def test_end_to_end_modified_shape():
    t = Trainer(tiny(strategy="end_to_end_modified", resolution="full"), None)
    assert t.refiner is None
    out = t.sample(2, "none")
    assert out.shape == (2, 4, 48, 84, 5)
    assert np.all((out == 0) | (out == 1))
    with pytest.raises(ConfigurationError):
        tiny(strategy="end_to_end_modified", refiner_channels=8)


def test_provenance_violation_is_raised(corpus):
    t = Trainer(tiny(), corpus)
    with pytest.raises(ProvenanceError):
        t._check_provenance("refine", np.full((1, 2), 0.5))


def test_entry_points_write_trace(corpus, tmp_path):
    for fn, name in [(train_two_stage, "a"), (train_joint, "b")]:
        t = fn(tiny(steps_stage1=1, steps_stage2=1), corpus, tmp_path / name)
        assert (tmp_path / name / "trace.csv").exists() and t.finished
    t = train_end_to_end(tiny(steps_stage1=1, steps_stage2=1), corpus, tmp_path / "c")
    assert t.state.step == 2


def test_resume_matches_uninterrupted(corpus, tmp_path):
    full = Trainer(tiny(), corpus, tmp_path / "full")
    full.run()
    part = Trainer(tiny(), corpus, tmp_path / "part")
    part.run(until_step=2)
    resumed = trainer_from_checkpoint(tmp_path / "part" / "checkpoints" / "pretrain_0000002.bgck", corpus,
                                      tmp_path / "resumed")
    resumed.run()
    assert resumed.trace.rows == full.trace.rows
    a, b = full.state_arrays(), resumed.state_arrays()
    assert a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def test_resume_rejects_changed_keys(corpus, tmp_path):
    Trainer(tiny(), corpus, tmp_path).run(until_step=2)
    path = tmp_path / "checkpoints" / "pretrain_0000002.bgck"
    with pytest.raises(ConfigurationError):
        trainer_from_checkpoint(path, corpus, seed=3)
    with pytest.raises(ConfigurationError):
        trainer_from_checkpoint(path, corpus[:8])


def test_trainer_validates_corpus(corpus):
    with pytest.raises(ConfigurationError):
        Trainer(tiny(), corpus * 0.5)
    with pytest.raises(ConfigurationError):
        Trainer(tiny(), corpus[:, :, :12])
    with pytest.raises(ConfigurationError):
        Trainer(tiny(), None).run()


def test_slope_anneals_per_epoch(corpus):
    t = Trainer(tiny(steps_stage1=1, steps_stage2=8), corpus)
    t.run()
    # 16 samples in batches of 4: one epoch every 4 refiner steps
    assert t.bn_layer.schedule.epoch == 2
    assert [v for _, v in t.trace.values("slope")][-1] == pytest.approx(1.1**2, abs=1e-12)
