"""WGAN-GP objectives and the staged training loop.

Strategies:

* ``two_stage``: G and D pretrain together; then G is frozen and the
  refiner R trains against D, which keeps its pretrained weights.
* ``joint``: same first stage; in the second stage G and R train together.
* ``end_to_end``: G, R and D train together from scratch in one stage.
* ``end_to_end_modified``: no refiner; G ends in binary neurons, at half
  the temporal resolution and with five tracks.

A training step is one generator (or refiner) update preceded by
``n_critic`` critic updates. Every random draw comes from one of several
named Philox streams derived from the run seed, and all of them are saved in
checkpoints, so a resumed run continues exactly where the original would
have.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import __version__
from .binary_neurons import BinaryNeuronLayer, SlopeSchedule
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .errors import ConfigurationError, NonFiniteError, ProvenanceError
from .evaluation import BinarizationStrategy, apply_binarization, polyphonicity, qualified_note_rate
from .networks import build_discriminator, build_generator, build_refiner, scaled
from .pianoroll import TRACKS_5, Resolution
from .tensor_core import Adam, Module, Tensor, concat, grad, make_node, mean, no_grad, sigmoid, sum_
from .tensor_core.tensor import getitem

log = logging.getLogger(__name__)

STREAMS = ("init", "latent", "gp", "sbn", "shuffle", "eval")
STAGE_BATCH_LARGE = ("pretrain",)
# config keys that may differ between a checkpoint and the run resuming it
RESUMABLE_KEYS = frozenset({
    "out", "log_every", "eval_every", "eval_samples", "checkpoint_every", "steps_stage2", "bn", "estimator",
    "deterministic",
})


# -- objectives --------------------------------------------------------------------
def safe_sqrt(x) -> Tensor:
    """Square root whose gradient at 0 is taken as 0 instead of infinity.

    A critic with zero input gradient then yields a finite penalty gradient.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    out = np.sqrt(x.data)
    coef = np.divide(0.5, out, out=np.zeros_like(out), where=out > 0)

    def vjp(g, needs):
        return (g * Tensor(coef),)

    return make_node(out, (x,), vjp, "safe_sqrt")


@dataclass(frozen=True)
class WganGpConfig:
    gp_weight: float = 10.0
    n_critic: int = 5
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    batch_size_stage1: int = 32
    batch_size_default: int = 16
    steps_stage1: int = 2000
    steps_stage2: int = 1000

    @classmethod
    def from_run(cls, cfg: RunConfig) -> "WganGpConfig":
        return cls(**{f.name: getattr(cfg, f.name) for f in dataclasses.fields(cls)})


@dataclass(frozen=True)
class CriticTerms:
    loss: Tensor
    wasserstein: float
    penalty: float


def _detached(x) -> Tensor:
    return Tensor(x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64))


def _interpolate(real: np.ndarray, fake: np.ndarray, eps) -> Tensor:
    eps = np.asarray(eps, dtype=np.float64).reshape((real.shape[0],) + (1,) * (real.ndim - 1))
    return Tensor(eps * real + (1.0 - eps) * fake, requires_grad=True)


def _penalty_from_scores(scores: Tensor, interp: Tensor) -> Tensor:
    (g,) = grad(sum_(scores), [interp], create_graph=True)
    axes = tuple(range(1, g.ndim))
    norms = safe_sqrt(sum_(g * g, axis=axes))
    gap = norms - 1.0
    return mean(gap * gap)


def gradient_penalty(D: Callable[[Tensor], Tensor], real_batch, fake_batch, eps_draws) -> Tensor:
    """Mean of (||grad_x D(x)|| - 1)^2 at x = eps * real + (1 - eps) * fake.

    The result stays differentiable with respect to D's parameters.
    """
    real, fake = _detached(real_batch).data, _detached(fake_batch).data
    if real.shape != fake.shape:
        raise ValueError(f"real {real.shape} and fake {fake.shape} batches differ")
    interp = _interpolate(real, fake, eps_draws)
    return _penalty_from_scores(D(interp), interp)


def critic_terms(D: Callable[[Tensor], Tensor], real_batch, fake_batch, gp_weight: float,
                 eps_draws) -> CriticTerms:
    """Critic objective from a single pass over [real; fake; interpolates]."""
    real, fake = _detached(real_batch), _detached(fake_batch)
    if real.shape != fake.shape:
        raise ValueError(f"real {real.shape} and fake {fake.shape} batches differ")
    n = real.shape[0]
    interp = _interpolate(real.data, fake.data, eps_draws)
    scores = D(concat([real, fake, interp], axis=0))
    s_real = getitem(scores, slice(0, n))
    s_fake = getitem(scores, slice(n, 2 * n))
    penalty = _penalty_from_scores(getitem(scores, slice(2 * n, 3 * n)), interp)
    distance = mean(s_fake) - mean(s_real)
    loss = distance + gp_weight * penalty if gp_weight else distance
    return CriticTerms(loss, float(distance.data), float(penalty.data))


def critic_loss(D, real_batch, fake_batch, gp_weight: float = 10.0, eps_draws=None) -> Tensor:
    """mean D(fake) - mean D(real) + gp_weight * penalty."""
    if eps_draws is None:
        eps_draws = np.random.default_rng(0).random(np.shape(_detached(real_batch).data)[0])
    return critic_terms(D, real_batch, fake_batch, gp_weight, eps_draws).loss


def generator_loss(D, fake_batch: Tensor) -> Tensor:
    return -mean(D(fake_batch))


# -- strategy presets ------------------------------------------------------------------
@dataclass(frozen=True)
class StrategyPreset:
    name: str
    uses_refiner: bool
    bn_in_generator_output: bool
    stages: tuple[str, ...]
    resolution_override: tuple = ()

    def resolution(self, base: Resolution) -> Resolution:
        return dataclasses.replace(base, **dict(self.resolution_override)) if self.resolution_override else base


PRESETS = {
    "two_stage": StrategyPreset("two_stage", True, False, ("pretrain", "refine")),
    "joint": StrategyPreset("joint", True, False, ("pretrain", "joint")),
    "end_to_end": StrategyPreset("end_to_end", True, False, ("single",)),
    "end_to_end_modified": StrategyPreset("end_to_end_modified", False, True, ("single",),
                                          (("steps_per_beat", 12), ("tracks", TRACKS_5))),
}


def resolve_resolution(cfg: RunConfig) -> Resolution:
    return PRESETS[cfg.strategy].resolution(cfg.res)


# -- random streams ----------------------------------------------------------------------
class RngStreams:
    """One independent Philox generator per purpose, all derived from the seed."""

    def __init__(self, seed: int):
        if seed < 0:
            raise ConfigurationError("seed must be non-negative")
        self.seed = int(seed)
        self.generators = {
            name: np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, i])))
            for i, name in enumerate(STREAMS)
        }

    def __getitem__(self, name: str) -> np.random.Generator:
        return self.generators[name]

    def state(self) -> dict:
        return {name: _jsonable(g.bit_generator.state) for name, g in self.generators.items()}

    def set_state(self, state: Mapping) -> None:
        for name, s in state.items():
            self.generators[name].bit_generator.state = _from_jsonable(s)


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return {"__uint64__": [int(v) for v in value.reshape(-1)]}
    if isinstance(value, np.integer):
        return int(value)
    return value


def _from_jsonable(value):
    if isinstance(value, dict):
        if "__uint64__" in value:
            return np.array(value["__uint64__"], dtype=np.uint64)
        return {k: _from_jsonable(v) for k, v in value.items()}
    return value


class BatchSampler:
    """Walks a shuffled permutation of the corpus, reshuffling after each pass."""

    def __init__(self, n: int, rng: np.random.Generator):
        if n < 1:
            raise ConfigurationError("training corpus is empty")
        self.n = n
        self.rng = rng
        self.permutation = rng.permutation(n)
        self.position = 0
        self.passes = 0

    def next(self, batch: int) -> np.ndarray:
        out = []
        while len(out) < batch:
            if self.position == self.n:
                self.permutation = self.rng.permutation(self.n)
                self.position = 0
                self.passes += 1
            take = min(batch - len(out), self.n - self.position)
            out.extend(self.permutation[self.position:self.position + take].tolist())
            self.position += take
        return np.asarray(out, dtype=np.int64)


# -- trace ------------------------------------------------------------------------------------
TRACE_HEADER = ("step", "metric", "value", "model", "strategy")


class MetricTrace:
    def __init__(self, rows=None):
        self.rows: list[tuple[int, str, float, str, str]] = [tuple(r) for r in (rows or [])]

    def add(self, step: int, metric: str, value: float, model: str, strategy: str) -> None:
        if self.rows and step < self.rows[-1][0]:
            raise ValueError(f"trace step {step} goes back from {self.rows[-1][0]}")
        self.rows.append((int(step), metric, float(value), model, strategy))

    def values(self, metric: str) -> list[tuple[int, float]]:
        return [(r[0], r[2]) for r in self.rows if r[1] == metric]

    def write(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRACE_HEADER)
            for step, metric, value, model, strategy in self.rows:
                writer.writerow([step, metric, "NA" if math.isnan(value) else repr(value), model, strategy])
        return path

    @classmethod
    def read(cls, path) -> "MetricTrace":
        rows = []
        with Path(path).open(newline="") as fh:
            for r in csv.DictReader(fh):
                value = math.nan if r["value"] == "NA" else float(r["value"])
                rows.append((int(r["step"]), r["metric"], value, r["model"], r["strategy"]))
        return cls(rows)


# -- trainer ----------------------------------------------------------------------------------
@dataclass
class TrainState:
    stage_index: int = 0
    stage_step: int = 0
    step: int = 0
    epoch: int = 0
    provenance_checks: int = 0
    frozen: tuple[str, ...] = ()


class Trainer:
    """Builds the networks for a config and runs its strategy's stages."""

    def __init__(self, cfg: RunConfig, data: np.ndarray | None, out_dir=None):
        """``data`` may be None for a trainer that only loads and samples."""
        self.cfg = cfg
        self.preset = PRESETS[cfg.strategy]
        self.res = resolve_resolution(cfg)
        if data is not None:
            data = np.asarray(data, dtype=np.float64)
            if data.ndim != 5 or data.shape[1:] != self.res.shape:
                raise ConfigurationError(f"corpus shape {data.shape[1:]} does not match resolution {self.res.shape}")
            if not np.all((data == 0) | (data == 1)):
                raise ConfigurationError("training corpus must be binary")
        self.data = data
        self.wgan = WganGpConfig.from_run(cfg)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.streams = RngStreams(cfg.seed)
        init = self.streams["init"]
        scale = cfg.scale_fraction

        self.bn_layer = BinaryNeuronLayer(cfg.bn_kind, cfg.estimator, SlopeSchedule(multiplier=cfg.slope_multiplier),
                                          self.streams["sbn"])
        self.generator = build_generator(self.res, scale, cfg.latent_dim, init,
                                         binary_output=self.bn_layer if self.preset.bn_in_generator_output else None)
        self.refiner = None
        if self.preset.uses_refiner:
            channels = cfg.refiner_channels or scaled(64, scale)
            self.refiner = build_refiner(self.res, channels, init, zero_init=cfg.refiner_zero_init)
            self.refiner.bn_layer = self.bn_layer
        self.discriminator = build_discriminator(self.res, scale, cfg.discriminator, init)

        self.groups: dict[str, Module] = {"generator": self.generator, "discriminator": self.discriminator}
        if self.refiner is not None:
            self.groups["refiner"] = self.refiner
        self.optimizers = {
            name: Adam(dict(m.named_parameters()), self.wgan.lr, self.wgan.beta1, self.wgan.beta2)
            for name, m in self.groups.items()
        }
        self.sampler = BatchSampler(len(data), self.streams["shuffle"]) if data is not None else None
        self.state = TrainState()
        self.trace = MetricTrace()
        self.on_fake: Callable[[str, np.ndarray], None] | None = None
        self._last: dict[str, float] = {}

    # -- bookkeeping -----------------------------------------------------------------
    @property
    def stages(self) -> tuple[str, ...]:
        return self.preset.stages

    @property
    def stage(self) -> str:
        return self.stages[min(self.state.stage_index, len(self.stages) - 1)]

    @property
    def finished(self) -> bool:
        return self.state.stage_index >= len(self.stages)

    @property
    def refiner_trained(self) -> bool:
        """Whether any completed or started stage has updated the refiner."""
        if self.refiner is None:
            return False
        done = list(self.stages[:self.state.stage_index])
        if not self.finished and self.state.stage_step > 0:
            done.append(self.stage)
        return any("refiner" in self.trainable(s) for s in done)

    def stage_steps(self, stage: str) -> int:
        if stage == "pretrain":
            return self.wgan.steps_stage1
        if stage == "single":
            return self.wgan.steps_stage1 + self.wgan.steps_stage2
        return self.wgan.steps_stage2

    def batch_size(self, stage: str) -> int:
        return self.wgan.batch_size_stage1 if stage in STAGE_BATCH_LARGE else self.wgan.batch_size_default

    def has_binary_neurons(self, stage: str) -> bool:
        return stage != "pretrain"

    def trainable(self, stage: str) -> tuple[str, ...]:
        return {
            "pretrain": ("generator",),
            "refine": ("refiner",),
            "joint": ("generator", "refiner"),
            "single": ("generator", "refiner") if self.refiner is not None else ("generator",),
        }[stage]

    def model_label(self, stage: str) -> str:
        return "pretrained" if stage == "pretrain" else self.cfg.bn

    # -- forward paths ---------------------------------------------------------------
    def latent(self, n: int, rng: np.random.Generator | None = None) -> Tensor:
        rng = rng if rng is not None else self.streams["latent"]
        return Tensor(rng.standard_normal((n, self.cfg.latent_dim)))

    def fake(self, stage: str, n: int) -> Tensor:
        """Fake batch for ``stage``, connected to the graph of its trainable nets."""
        z = self.latent(n)
        if stage == "pretrain":
            return self.generator(z, training=True)
        if stage == "refine":
            with no_grad():
                logits = self.generator.logits(z, training=False)
            return self.refiner(sigmoid(logits), training=True, logits=logits)
        if self.refiner is None:
            return self.generator(z, training=True)
        logits = self.generator.logits(z, training=True)
        return self.refiner(sigmoid(logits), training=True, logits=logits)

    def _check_provenance(self, stage: str, batch: np.ndarray) -> None:
        if self.on_fake is not None:
            self.on_fake(stage, batch)
        if self.has_binary_neurons(stage):
            if not np.all((batch == 0.0) | (batch == 1.0)):
                raise ProvenanceError(f"step {self.state.step}: non-binary fake batch in stage {stage}")
            self.state.provenance_checks += 1

    # -- updates ------------------------------------------------------------------------
    def _apply(self, group: str, loss: Tensor, what: str) -> None:
        if not np.isfinite(loss.data):
            raise NonFiniteError(f"{what} loss is {float(loss.data)} at step {self.state.step}")
        names, params = zip(*self.groups[group].named_parameters())
        grads = grad(loss, list(params))
        self.optimizers[group].step({k: g.data for k, g in zip(names, grads)})

    def critic_update(self, stage: str, n: int) -> None:
        real = self.data[self.sampler.next(n)]
        with no_grad():
            fake = self.fake(stage, n).data
        self._check_provenance(stage, fake)
        eps = self.streams["gp"].random(n)
        terms = critic_terms(self.discriminator, real, fake, self.wgan.gp_weight, eps)
        self._apply("discriminator", terms.loss, "critic")
        self._last.update(d_loss=float(terms.loss.data), wasserstein=terms.wasserstein, gp=terms.penalty)

    def generator_update(self, stage: str, n: int) -> None:
        fake = self.fake(stage, n)
        self._check_provenance(stage, fake.data)
        loss = generator_loss(self.discriminator, fake)
        if not np.isfinite(loss.data):
            raise NonFiniteError(f"generator loss is {float(loss.data)} at step {self.state.step}")
        groups = self.trainable(stage)
        named = [(g, k, p) for g in groups for k, p in self.groups[g].named_parameters()]
        grads = grad(loss, [p for _, _, p in named])
        for g in groups:
            self.optimizers[g].step({k: gr.data for (gg, k, _), gr in zip(named, grads) if gg == g})
        self._last["g_loss"] = float(loss.data)

    # -- loop -----------------------------------------------------------------------------
    def run(self, until_step: int | None = None) -> TrainState:
        """Run remaining stages (or stop once the global step reaches ``until_step``)."""
        if self.data is None:
            raise ConfigurationError("this trainer was built without a training corpus")
        while not self.finished:
            stage = self.stage
            if self.state.stage_step == 0:
                self._enter_stage(stage)
            if not self._run_stage(stage, until_step):
                return self.state
            self._finish_stage(stage)
        return self.state

    def _enter_stage(self, stage: str) -> None:
        self.state.frozen = tuple(sorted(set(self.groups) - set(self.trainable(stage)) - {"discriminator"}))
        if stage != self.stages[0] and self.cfg.reset_critic_moments:
            self.optimizers["discriminator"].reset()
        log.info("stage %s: %d steps, batch %d", stage, self.stage_steps(stage), self.batch_size(stage))

    def _finish_stage(self, stage: str) -> None:
        self.save(f"{stage}_final")
        self.state.stage_index += 1
        self.state.stage_step = 0
        self.state.epoch = 0

    def _run_stage(self, stage: str, until_step: int | None) -> bool:
        total = self.stage_steps(stage)
        n = self.batch_size(stage)
        steps_per_epoch = math.ceil(len(self.data) / n)
        while self.state.stage_step < total:
            if until_step is not None and self.state.step >= until_step:
                return False
            passes = self.sampler.passes
            try:
                for _ in range(self.wgan.n_critic):
                    self.critic_update(stage, n)
                self.generator_update(stage, n)
            except NonFiniteError as exc:
                path = self.save(f"diverged_{self.state.step:07d}")
                raise NonFiniteError(f"{exc}; last values {self._last}; state saved to {path}") from exc
            self.state.stage_step += 1
            self.state.step += 1
            if self.cfg.epoch_unit == "generator_steps":
                epoch_done = self.state.stage_step % steps_per_epoch == 0
            else:
                epoch_done = self.sampler.passes > passes
            if epoch_done:
                self.state.epoch += 1
                if self.has_binary_neurons(stage):
                    self.bn_layer.anneal()
            self._record(stage)
        return True

    def _record(self, stage: str) -> None:
        step = self.state.step
        model, strategy = self.model_label(stage), self.cfg.strategy
        if step % self.cfg.log_every == 0:
            for key in ("d_loss", "g_loss", "wasserstein", "gp"):
                self.trace.add(step, key, self._last[key], model, strategy)
            if self.has_binary_neurons(stage):
                self.trace.add(step, "slope", self.bn_layer.slope, model, strategy)
        if step % self.cfg.eval_every == 0:
            qn, pp = self.quick_metrics(stage)
            self.trace.add(step, "QN", qn, model, strategy)
            self.trace.add(step, "PP", pp, model, strategy)
        if step % self.cfg.checkpoint_every == 0:
            self.save(f"{stage}_{step:07d}")

    def quick_metrics(self, stage: str) -> tuple[float, float]:
        """Mean QN and PP of a fixed-size sample drawn from the eval stream."""
        mode = "ht" if stage == "pretrain" else ("refiner" if self.refiner is not None else "none")
        rolls = self.sample(self.cfg.eval_samples, mode, self.streams["eval"])
        qn = np.array([qualified_note_rate(r) for r in rolls])
        pp = np.array([polyphonicity(r) for r in rolls])
        qn, pp = qn[~np.isnan(qn)], pp[~np.isnan(pp)]
        return (float(qn.mean()) if qn.size else math.nan, float(pp.mean()) if pp.size else math.nan)

    # -- sampling -------------------------------------------------------------------------
    def sample(self, n: int, binarize: str = "none", rng: np.random.Generator | None = None,
               chunk: int = 64) -> np.ndarray:
        """``n`` rolls ``[n, bar, time, pitch, track]`` from the trained networks.

        ``none`` returns raw generator outputs, ``ht``/``bs`` binarize them and
        ``refiner`` passes them through R. Networks run in inference mode.
        """
        rng = rng if rng is not None else self.streams["eval"]
        if binarize == "refiner" and self.refiner is None:
            raise ConfigurationError("this strategy has no refiner")
        if binarize not in ("none", "ht", "bs", "refiner"):
            raise ConfigurationError(f"unknown binarization {binarize!r}")
        out = []
        with no_grad():
            for start in range(0, n, chunk):
                z = self.latent(min(chunk, n - start), rng)
                if binarize == "refiner":
                    logits = self.generator.logits(z, training=False)
                    x = self.refiner(sigmoid(logits), training=False, logits=logits, rng=rng).data
                else:
                    x = self.generator(z, training=False, rng=rng).data
                    if binarize in ("ht", "bs"):
                        x = apply_binarization(x, BinarizationStrategy(binarize, rng=rng)).astype(np.float64)
                out.append(x)
        return np.concatenate(out, axis=0)

    # -- checkpoints ----------------------------------------------------------------------
    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        for group, module in self.groups.items():
            for k, p in module.named_parameters():
                arrays[f"param/{k}"] = p.data
            for k, b in module.named_buffers():
                arrays[f"buffer/{k}"] = b
            for k, a in self.optimizers[group].state_arrays().items():
                arrays[f"adam/{group}/{k}"] = a
        if self.sampler is not None:
            arrays["data/permutation"] = self.sampler.permutation
        return arrays

    def state_meta(self) -> dict:
        return {
            "version": __version__,
            "config": self.cfg.to_dict(),
            "state": dataclasses.asdict(self.state),
            "slope_epoch": self.bn_layer.schedule.epoch,
            "adam_t": {g: o.t for g, o in self.optimizers.items()},
            "sampler": ({"position": self.sampler.position, "passes": self.sampler.passes}
                        if self.sampler is not None else None),
            "rng": self.streams.state(),
            "trace": [list(r) for r in self.trace.rows],
        }

    def save(self, tag: str) -> Path | None:
        if self.out_dir is None:
            return None
        directory = self.out_dir / "checkpoints"
        directory.mkdir(parents=True, exist_ok=True)
        return save_checkpoint(directory / f"{tag}.bgck", self.state_arrays(), self.state_meta())

    def load(self, path, allow: frozenset[str] = RESUMABLE_KEYS) -> None:
        arrays, meta = load_checkpoint(path)
        saved = meta["config"]
        for key, value in self.cfg.to_dict().items():
            if key not in allow and saved.get(key) != value:
                raise ConfigurationError(f"checkpoint {path} was written with {key}={saved.get(key)!r}, "
                                         f"config has {value!r}")
        for group, module in self.groups.items():
            for k, p in module.named_parameters():
                p.data[...] = _lookup(arrays, f"param/{k}", p.data.shape, path)
            for k, b in module.named_buffers():
                b[...] = _lookup(arrays, f"buffer/{k}", b.shape, path)
            opt = self.optimizers[group]
            names = opt.state_arrays()
            opt.load_state_arrays({k: _lookup(arrays, f"adam/{group}/{k}", v.shape, path) for k, v in names.items()},
                                  meta["adam_t"][group])
        if self.sampler is not None:
            if meta["sampler"] is None or "data/permutation" not in arrays:
                raise ConfigurationError(f"checkpoint {path} carries no data order to resume from")
            permutation = arrays["data/permutation"].astype(np.int64)
            if permutation.size != self.sampler.n:
                raise ConfigurationError(f"checkpoint {path} was trained on {permutation.size} samples, "
                                         f"corpus has {self.sampler.n}")
            self.sampler.permutation = permutation
            self.sampler.position = int(meta["sampler"]["position"])
            self.sampler.passes = int(meta["sampler"]["passes"])
        self.streams.set_state(meta["rng"])
        st = meta["state"]
        self.state = TrainState(st["stage_index"], st["stage_step"], st["step"], st["epoch"],
                                st["provenance_checks"], tuple(st["frozen"]))
        self.bn_layer.schedule = dataclasses.replace(self.bn_layer.schedule, epoch=int(meta["slope_epoch"]))
        self.trace = MetricTrace(meta["trace"])


def _lookup(arrays, key, shape, path):
    if key not in arrays:
        raise ConfigurationError(f"checkpoint {path} has no entry {key}")
    if arrays[key].shape != tuple(shape):
        raise ConfigurationError(f"checkpoint {path}: {key} has shape {arrays[key].shape}, expected {tuple(shape)}")
    return arrays[key]


def trainer_from_checkpoint(path, data: np.ndarray | None = None, out_dir=None, **overrides) -> Trainer:
    """Rebuild the trainer recorded in a checkpoint and load its state.

    ``overrides`` may only touch keys that a resumed run is allowed to change.
    """
    _, meta = load_checkpoint(path)
    bad = sorted(set(overrides) - RESUMABLE_KEYS)
    if bad:
        raise ConfigurationError(f"cannot override {bad} when resuming from {path}")
    cfg = RunConfig.from_mapping(meta["config"]).replace(**overrides)
    trainer = Trainer(cfg, data, out_dir)
    trainer.load(path)
    return trainer


# -- strategy entry points ----------------------------------------------------------------
def _train(cfg: RunConfig, data, out_dir, strategy: str) -> Trainer:
    if cfg.strategy != strategy:
        cfg = cfg.replace(strategy=strategy)
    trainer = Trainer(cfg, data, out_dir)
    trainer.run()
    if out_dir is not None:
        trainer.trace.write(Path(out_dir) / "trace.csv")
    return trainer


def train_two_stage(cfg: RunConfig, data, out_dir=None) -> Trainer:
    return _train(cfg, data, out_dir, "two_stage")


def train_joint(cfg: RunConfig, data, out_dir=None) -> Trainer:
    return _train(cfg, data, out_dir, "joint")


def train_end_to_end(cfg: RunConfig, data, out_dir=None, preset: str = "end_to_end") -> Trainer:
    if preset not in ("end_to_end", "end_to_end_modified"):
        raise ConfigurationError(f"unknown end-to-end preset {preset!r}")
    return _train(cfg, data, out_dir, preset)


__all__ = [
    "BatchSampler", "CriticTerms", "MetricTrace", "PRESETS", "RngStreams", "STREAMS", "StrategyPreset",
    "TrainState", "Trainer", "WganGpConfig", "critic_loss", "critic_terms", "generator_loss",
    "gradient_penalty", "resolve_resolution", "safe_sqrt", "train_end_to_end", "train_joint",
    "train_two_stage", "trainer_from_checkpoint",
]
