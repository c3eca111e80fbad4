"""Generator, refiner and discriminator builders.

All three networks share one :class:`ExtentPlan`, which fixes how the bar,
time and pitch extents are grown by the generator and shrunk again by the
discriminator. At full resolution (4 bars x 96 steps x 84 pitches) the plan
reproduces the published layer table exactly; for smaller resolutions it
factorises the extents into the same layer pattern.

Tensors are laid out ``[batch, bar, time, pitch, channel]``; piano-roll
tensors use the track axis as the channel axis.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .binary_neurons import BinaryNeuronLayer, SlopeSchedule
from .errors import ConfigurationError, DimensionError
from .pianoroll import Resolution
from .tensor_core import (
    BatchNorm,
    Conv3d,
    Dense,
    LayerSpec,
    Module,
    Tensor,
    TransposedConv3d,
    activate,
    concat,
    pad,
    sigmoid,
)
from .tensor_core.tensor import getitem, log, reshape, sum_

LATENT_DIM = 128
DISCRIMINATOR_VARIANTS = ("full", "ablated_I", "ablated_II")
_REF_TIME = (4, 4, 6)
_REF_PITCH = (3, 3, 2)


@dataclass(frozen=True)
class ExtentPlan:
    """Factorisation of the roll extents shared by G and D.

    Generator growth per axis: bar ``bar_seed -> bars`` (kernel ``bar_kernel``);
    time ``1 -> a -> a*b -> a*b*c``; pitch ``1 -> p1 -> octaves -> 12*octaves``
    where ``octaves = (p1 - 1) * pitch_stride + pitch_kernel``.
    """

    bar_seed: int
    bar_kernel: int
    time_factors: tuple[int, int, int]
    pitch_head: int
    pitch_kernel: int
    pitch_stride: int
    octave: int = 12

    @property
    def octaves(self) -> int:
        return (self.pitch_head - 1) * self.pitch_stride + self.pitch_kernel


def _log_distance(values, reference) -> float:
    # rounded so that mathematically equal distances compare equal
    return round(sum(abs(math.log(v / r)) for v, r in zip(values, reference)), 9)


def plan_for(res: Resolution) -> ExtentPlan:
    if res.pitches % 12:
        raise ConfigurationError(f"pitch extent {res.pitches} is not a whole number of octaves")
    steps = res.steps_per_bar
    triples = [
        (a, b, steps // (a * b))
        for a in range(1, steps + 1) if steps % a == 0
        for b in range(1, steps // a + 1) if (steps // a) % b == 0
    ]
    time = min(triples, key=lambda t: (_log_distance(t, _REF_TIME), t.count(1), -t[2], -t[0]))
    octaves = res.pitches // 12
    candidates = []
    for head in range(1, octaves + 1):
        for stride in range(1, 4):
            kernel = octaves - (head - 1) * stride
            # a stride wider than the kernel would leave silent gaps
            if kernel >= 1 and (head == 1 or stride <= kernel):
                candidates.append((head, kernel, stride))
    pitch = min(candidates, key=lambda t: (_log_distance(t, _REF_PITCH), t))
    if res.bars >= 2:
        bar_seed, bar_kernel = res.bars - 1, 2
    else:
        bar_seed, bar_kernel = 1, 1
    return ExtentPlan(bar_seed, bar_kernel, time, *pitch)


def scaled(channels: int, scale) -> int:
    return max(1, int(round(channels * Fraction(scale))))


def _trace_extents(extents, specs):
    trace = [tuple(extents)]
    for spec in specs:
        extents = spec.output_extents(extents)
        trace.append(tuple(extents))
    return trace


def _check_chain(name: str, start, specs, target) -> list[tuple[int, int, int]]:
    try:
        trace = _trace_extents(start, specs)
    except DimensionError as exc:
        raise ConfigurationError(f"{name}: {exc}") from exc
    if trace[-1] != tuple(target):
        raise ConfigurationError(f"{name}: extent chain {trace} does not land on {tuple(target)}")
    return trace


# -- generator ---------------------------------------------------------------
class GeneratorNet(Module):
    """Shared chain followed by one private chain (two substreams) per track."""

    def __init__(self, res: Resolution, scale=1, latent_dim: int = LATENT_DIM,
                 rng: np.random.Generator | None = None, plan: ExtentPlan | None = None,
                 binary_output: BinaryNeuronLayer | None = None):
        super().__init__("generator")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.res = res
        self.plan = plan if plan is not None else plan_for(res)
        self.latent_dim = latent_dim
        self.scale = Fraction(scale)
        self.binary_output = binary_output
        p = self.plan
        a, b, c = p.time_factors
        ch = lambda n: scaled(n, scale)  # noqa: E731
        self.seed_shape = (p.bar_seed, 1, 1, ch(512))
        self.shared_specs = [
            LayerSpec("transposed_conv3d", ch(256), (p.bar_kernel, 1, 1), (1, 1, 1), "relu"),
            LayerSpec("transposed_conv3d", ch(128), (1, a, 1), (1, a, 1), "relu"),
            LayerSpec("transposed_conv3d", ch(128), (1, 1, p.pitch_head), (1, 1, p.pitch_head), "relu"),
            LayerSpec("transposed_conv3d", ch(64), (1, b, 1), (1, b, 1), "relu"),
            LayerSpec("transposed_conv3d", ch(64), (1, 1, p.pitch_kernel), (1, 1, p.pitch_stride), "relu"),
        ]
        self.substream_specs = (
            [LayerSpec("transposed_conv3d", ch(64), (1, 1, p.octave), (1, 1, p.octave), "relu"),
             LayerSpec("transposed_conv3d", ch(32), (1, c, 1), (1, c, 1), "relu")],
            [LayerSpec("transposed_conv3d", ch(64), (1, c, 1), (1, c, 1), "relu"),
             LayerSpec("transposed_conv3d", ch(32), (1, 1, p.octave), (1, 1, p.octave), "relu")],
        )
        final_act = "none" if binary_output is not None else "sigmoid"
        self.final_spec = LayerSpec("transposed_conv3d", 1, (1, 1, 1), (1, 1, 1), final_act)

        target = (res.bars, res.steps_per_bar, res.pitches)
        shared_trace = _check_chain("generator shared", self.seed_shape[:3], self.shared_specs, shared_trace_end(p))
        self.extent_trace = {"shared": shared_trace}
        for i, specs in enumerate(self.substream_specs):
            self.extent_trace[f"substream{i + 1}"] = _check_chain(
                f"generator substream {i + 1}", shared_trace[-1], specs, target)

        self.dense = self.add(Dense("dense", latent_dim, int(np.prod(self.seed_shape)), rng, "relu"))
        self.dense_bn = self.add(BatchNorm("dense_bn", int(np.prod(self.seed_shape))))
        self.shared = self.add(_TransChain("shared", self.seed_shape[3], self.shared_specs, rng, batch_norm=True))
        self.privates = []
        c_in = self.shared_specs[-1].filters
        for t in range(res.n_tracks):
            private = self.add(Module(f"private{t}"))
            subs = [
                private.add(_TransChain(f"substream{i + 1}", c_in, specs, rng, batch_norm=True))
                for i, specs in enumerate(self.substream_specs)
            ]
            merged = sum(s[-1].filters for s in self.substream_specs)
            final = private.add(TransposedConv3d("final", merged, self.final_spec, rng))
            self.privates.append((subs, final))

    @property
    def layer_specs(self) -> dict[str, list[LayerSpec]]:
        dense = LayerSpec("dense", int(np.prod(self.seed_shape)), activation="relu")
        return {
            "shared": [dense] + list(self.shared_specs),
            "substream1": list(self.substream_specs[0]),
            "substream2": list(self.substream_specs[1]),
            "final": [self.final_spec],
        }

    def logits(self, z: Tensor, training: bool) -> Tensor:
        """Final pre-activation, ``[batch, bar, time, pitch, track]``."""
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise DimensionError(f"latent must be [batch, {self.latent_dim}], got {z.shape}")
        h = activate(self.dense_bn(self.dense(z), training), "relu")
        h = reshape(h, (z.shape[0],) + self.seed_shape)
        h = self.shared(h, training)
        outs = []
        for subs, final in self.privates:
            branches = [sub(h, training) for sub in subs]
            outs.append(final(concat(branches, axis=-1)))
        return concat(outs, axis=-1)

    def __call__(self, z: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        logits = self.logits(z, training)
        if self.binary_output is not None:
            return self.binary_output(logits, rng=rng)
        return sigmoid(logits)


def shared_trace_end(p: ExtentPlan) -> tuple[int, int, int]:
    a, b, _ = p.time_factors
    return (p.bar_seed + p.bar_kernel - 1, a * b, p.octaves)


class _TransChain(Module):
    def __init__(self, name, c_in, specs, rng, batch_norm: bool):
        super().__init__(name)
        self.layers = []
        for i, spec in enumerate(specs):
            conv = self.add(TransposedConv3d(f"transconv{i}", c_in, spec, rng))
            bn = self.add(BatchNorm(f"bn{i}", spec.filters)) if batch_norm else None
            self.layers.append((conv, bn, spec.activation))
            c_in = spec.filters

    def __getitem__(self, i):
        return self.layers[i][0].spec

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        for conv, bn, act in self.layers:
            x = conv(x)
            if bn is not None:
                x = bn(x, training)
            x = activate(x, act)
        return x


class _ConvChain(Module):
    def __init__(self, name, c_in, specs, rng):
        super().__init__(name)
        self.layers = []
        for i, spec in enumerate(specs):
            self.layers.append(self.add(Conv3d(f"conv{i}", c_in, spec, rng)))
            c_in = spec.filters
        self.specs = list(specs)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = activate(layer(x), layer.spec.activation)
        return x


def build_generator(res: Resolution, scale=1, latent_dim: int = LATENT_DIM,
                    rng: np.random.Generator | None = None, plan: ExtentPlan | None = None,
                    binary_output: BinaryNeuronLayer | None = None) -> GeneratorNet:
    return GeneratorNet(res, scale, latent_dim, rng, plan, binary_output)


# -- refiner -----------------------------------------------------------------------
class ResidualUnit(Module):
    """Pre-activation unit: BN, ReLU, conv, BN, ReLU, conv, plus identity skip.

    Convolutions are 3x3 over (time, pitch) with symmetric zero padding so the
    tensor size is unchanged.
    """

    def __init__(self, name: str, channels: int, rng: np.random.Generator, zero_init: bool = True):
        super().__init__(name)
        self.bn0 = self.add(BatchNorm("bn0", 1))
        self.conv0 = self.add(Conv3d("conv0", 1, LayerSpec("conv3d", channels, (1, 3, 3)), rng))
        self.bn1 = self.add(BatchNorm("bn1", channels))
        self.conv1 = self.add(Conv3d("conv1", channels, LayerSpec("conv3d", 1, (1, 3, 3)), rng, zero_init=zero_init))

    def residual(self, x: Tensor, training: bool) -> Tensor:
        widths = ((0, 0), (0, 0), (1, 1), (1, 1), (0, 0))
        h = activate(self.bn0(x, training), "relu")
        h = self.conv0(pad(h, widths))
        h = activate(self.bn1(h, training), "relu")
        return self.conv1(pad(h, widths))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return x + self.residual(x, training)


class RefinerNet(Module):
    """Per-track residual refiners ending in a binary-neuron layer.

    The residual units act on the logit of the generator's output, so with a
    zero residual the deterministic refiner reproduces hard thresholding at
    0.5 and the stochastic one reproduces Bernoulli sampling.
    """

    def __init__(self, res: Resolution, channels: int = 64, rng: np.random.Generator | None = None,
                 bn_layer: BinaryNeuronLayer | None = None, n_units: int = 2, zero_init: bool = True):
        super().__init__("refiner")
        if channels < 1:
            raise ConfigurationError("refiner channels must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.res = res
        self.channels = channels
        self.bn_layer = bn_layer if bn_layer is not None else BinaryNeuronLayer()
        self.units = []
        for t in range(res.n_tracks):
            private = self.add(Module(f"private{t}"))
            self.units.append([private.add(ResidualUnit(f"unit{i}", channels, rng, zero_init)) for i in range(n_units)])

    def preactivation(self, x: Tensor, training: bool, logits: Tensor | None = None) -> Tensor:
        if logits is None:
            clipped = np.clip(x.data, 1e-12, 1.0 - 1e-12)
            x = x + Tensor(clipped - x.data)
            logits = log(x) - log(1.0 - x)
        outs = []
        for t, units in enumerate(self.units):
            h = getitem(logits, (Ellipsis, slice(t, t + 1)))
            for unit in units:
                h = unit(h, training)
            outs.append(h)
        return concat(outs, axis=-1)

    def __call__(self, x: Tensor, training: bool = False, logits: Tensor | None = None,
                 rng: np.random.Generator | None = None) -> Tensor:
        return self.bn_layer(self.preactivation(x, training, logits), rng=rng)


def build_refiner(res: Resolution, channels_per_unit: int = 64, rng: np.random.Generator | None = None,
                  bn_kind: str = "deterministic", estimator: str = "sigmoid_adjusted_st",
                  schedule: SlopeSchedule | None = None, bn_rng: np.random.Generator | None = None,
                  zero_init: bool = True) -> RefinerNet:
    layer = BinaryNeuronLayer(bn_kind, estimator, schedule, bn_rng)
    return RefinerNet(res, channels_per_unit, rng, layer, zero_init=zero_init)


# -- discriminator features --------------------------------------------------------
def onset_feature(x: Tensor) -> Tensor:
    """Time difference (against an implicit silent step before each bar), summed over pitch."""
    previous = pad(getitem(x, (slice(None), slice(None), slice(0, x.shape[2] - 1))),
                   ((0, 0), (0, 0), (1, 0), (0, 0), (0, 0)))
    return sum_(x - previous, axis=3, keepdims=True)


def chroma_feature(x: Tensor, steps_per_beat: int) -> Tensor:
    """Per-beat pitch-class counts: ``[batch, bar, beats, 12, track]``."""
    batch, bars, steps, pitches, tracks = x.shape
    if steps % steps_per_beat:
        raise ConfigurationError(f"{steps} steps per bar is not a whole number of {steps_per_beat}-step beats")
    beats = steps // steps_per_beat
    h = sum_(reshape(x, (batch, bars, beats, steps_per_beat, pitches, tracks)), axis=3)
    remainder = (-pitches) % 12
    if remainder:
        h = pad(h, ((0, 0), (0, 0), (0, 0), (0, remainder), (0, 0)))
    octaves = (pitches + remainder) // 12
    return sum_(reshape(h, (batch, bars, beats, octaves, 12, tracks)), axis=3)


# -- discriminator -------------------------------------------------------------------
class DiscriminatorNet(Module):
    """Critic returning one unbounded score per sample. No batch normalisation."""

    def __init__(self, res: Resolution, scale=1, variant: str = "full",
                 rng: np.random.Generator | None = None, plan: ExtentPlan | None = None):
        super().__init__("discriminator")
        if variant not in DISCRIMINATOR_VARIANTS:
            raise ConfigurationError(f"unknown discriminator variant {variant!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.res = res
        self.variant = variant
        self.plan = p = plan if plan is not None else plan_for(res)
        self.scale = Fraction(scale)
        a, b, c = p.time_factors
        ch = lambda n: scaled(n, scale)  # noqa: E731
        L = lambda f, k, s: LayerSpec("conv3d", ch(f), k, s, "leaky_relu")  # noqa: E731
        extents = (res.bars, res.steps_per_bar, res.pitches)
        m = res.n_tracks
        bars_out = p.bar_seed
        self.extent_trace = {}

        if variant == "ablated_II":
            specs = [
                L(128, (1, 1, p.octave), (1, 1, p.octave)),
                L(128, (1, 1, p.pitch_kernel), (1, 1, p.pitch_stride)),
                L(256, (1, c, 1), (1, c, 1)),
                L(256, (1, b, 1), (1, b, 1)),
                L(512, (1, 1, p.pitch_head), (1, 1, p.pitch_head)),
                L(512, (1, a, 1), (1, a, 1)),
                L(1024, (p.bar_kernel, 1, 1), (1, 1, 1)),
            ]
            self.extent_trace["main"] = _check_chain("ablated-II discriminator", extents, specs, (bars_out, 1, 1))
            self.main = self.add(_ConvChain("main", m, specs, rng))
            self.out = self.add(Dense("dense0", bars_out * specs[-1].filters, 1, rng, "none"))
            return

        self.substream_specs = (
            [L(32, (1, 1, p.octave), (1, 1, p.octave)), L(64, (1, c, 1), (1, c, 1))],
            [L(32, (1, c, 1), (1, c, 1)), L(64, (1, 1, p.octave), (1, 1, p.octave))],
        )
        self.private_merge_spec = L(64, (1, 1, 1), (1, 1, 1))
        private_out = (res.bars, a * b, p.octaves)
        for i, specs in enumerate(self.substream_specs):
            self.extent_trace[f"substream{i + 1}"] = _check_chain(
                f"discriminator substream {i + 1}", extents, specs, private_out)
        self.privates = []
        for t in range(m):
            private = self.add(Module(f"private{t}"))
            subs = [private.add(_ConvChain(f"substream{i + 1}", 1, specs, rng))
                    for i, specs in enumerate(self.substream_specs)]
            merged = sum(s[-1].filters for s in self.substream_specs)
            merge = private.add(_ConvChain("merge", merged, [self.private_merge_spec], rng))
            self.privates.append((subs, merge))

        self.shared_specs = [
            L(128, (1, b, p.pitch_kernel), (1, b, p.pitch_stride)),
            L(256, (1, a, p.pitch_head), (1, a, p.pitch_head)),
        ]
        self.extent_trace["shared"] = _check_chain("discriminator shared", private_out, self.shared_specs,
                                                   (res.bars, 1, 1))
        self.shared = self.add(_ConvChain("shared", m * self.private_merge_spec.filters, self.shared_specs, rng))
        merged_channels = self.shared_specs[-1].filters

        self.onset = self.chroma = None
        if variant == "full":
            self.onset_specs = [L(32, (1, c, 1), (1, c, 1)), L(64, (1, b, 1), (1, b, 1)), L(128, (1, a, 1), (1, a, 1))]
            self.chroma_specs = [L(64, (1, 1, 12), (1, 1, 12)),
                                 L(128, (1, res.beats_per_bar, 1), (1, res.beats_per_bar, 1))]
            self.extent_trace["onset"] = _check_chain("onset stream", (res.bars, res.steps_per_bar, 1),
                                                      self.onset_specs, (res.bars, 1, 1))
            self.extent_trace["chroma"] = _check_chain("chroma stream", (res.bars, res.beats_per_bar, 12),
                                                       self.chroma_specs, (res.bars, 1, 1))
            self.onset = self.add(_ConvChain("onset", m, self.onset_specs, rng))
            self.chroma = self.add(_ConvChain("chroma", m, self.chroma_specs, rng))
            merged_channels += self.onset_specs[-1].filters + self.chroma_specs[-1].filters

        self.merge_specs = [L(512, (p.bar_kernel, 1, 1), (1, 1, 1))]
        self.extent_trace["merge"] = _check_chain("discriminator merge", (res.bars, 1, 1), self.merge_specs,
                                                  (bars_out, 1, 1))
        self.merge = self.add(_ConvChain("merge", merged_channels, self.merge_specs, rng))
        hidden = ch(1536)
        self.dense_specs = [LayerSpec("dense", hidden, activation="leaky_relu"), LayerSpec("dense", 1)]
        self.dense0 = self.add(Dense("dense0", bars_out * self.merge_specs[0].filters, hidden, rng, "leaky_relu"))
        self.dense1 = self.add(Dense("dense1", hidden, 1, rng, "none"))

    @property
    def layer_specs(self) -> dict[str, list[LayerSpec]]:
        if self.variant == "ablated_II":
            return {"main": list(self.main.specs), "dense": [LayerSpec("dense", 1)]}
        out = {
            "substream1": list(self.substream_specs[0]),
            "substream2": list(self.substream_specs[1]),
            "private_merge": [self.private_merge_spec],
            "shared": list(self.shared_specs),
            "merge": list(self.merge_specs) + list(self.dense_specs),
        }
        if self.variant == "full":
            out["onset"] = list(self.onset_specs)
            out["chroma"] = list(self.chroma_specs)
        return out

    def stream_inputs(self, x: Tensor) -> dict[str, Tensor]:
        return {"onset": onset_feature(x), "chroma": chroma_feature(x, self.res.steps_per_beat)}

    def __call__(self, x: Tensor) -> Tensor:
        expected = self.res.shape
        if x.ndim != 5 or x.shape[1:] != expected:
            raise DimensionError(f"discriminator expects [batch, {expected}], got {x.shape}")
        batch = x.shape[0]
        if self.variant == "ablated_II":
            h = self.main(x)
            return self.out(reshape(h, (batch, -1)))
        feats = []
        for t, (subs, merge) in enumerate(self.privates):
            track = getitem(x, (Ellipsis, slice(t, t + 1)))
            feats.append(merge(concat([sub(track) for sub in subs], axis=-1)))
        streams = [self.shared(concat(feats, axis=-1))]
        if self.variant == "full":
            streams.append(self.onset(onset_feature(x)))
            streams.append(self.chroma(chroma_feature(x, self.res.steps_per_beat)))
        h = self.merge(concat(streams, axis=-1))
        h = activate(self.dense0(reshape(h, (batch, -1))), "leaky_relu")
        return self.dense1(h)


def build_discriminator(res: Resolution, scale=1, variant: str = "full",
                        rng: np.random.Generator | None = None, plan: ExtentPlan | None = None) -> DiscriminatorNet:
    return DiscriminatorNet(res, scale, variant, rng, plan)


def count_parameters(module: Module) -> int:
    return sum(p.size for p in module.parameters().values())


__all__ = [
    "DISCRIMINATOR_VARIANTS", "LATENT_DIM", "DiscriminatorNet", "ExtentPlan", "GeneratorNet",
    "RefinerNet", "ResidualUnit", "build_discriminator", "build_generator", "build_refiner",
    "chroma_feature", "count_parameters", "onset_feature", "plan_for", "scaled",
]
