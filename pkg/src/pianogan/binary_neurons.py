"""Deterministic and stochastic binary neurons with straight-through estimators.

Forward passes threshold exactly to {0, 1}. Backward passes use either the
plain straight-through rule (identity) or the sigmoid-adjusted rule, whose
sigmoid slope is annealed by a constant factor after every epoch. The slope
only enters the backward expression; forward decisions never depend on it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .tensor_core import Tensor, make_node
from .tensor_core.tensor import _as_tensor, _np_sigmoid

KINDS = ("deterministic", "stochastic")
ESTIMATORS = ("sigmoid_adjusted_st", "st")
_KIND_ALIASES = {"dbn": "deterministic", "sbn": "stochastic"}


@dataclass(frozen=True)
class SlopeSchedule:
    base: float = 1.0
    multiplier: float = 1.1
    epoch: int = 0

    @property
    def slope(self) -> float:
        return self.base * self.multiplier**self.epoch


def anneal_slope(schedule: SlopeSchedule) -> SlopeSchedule:
    """Advance the schedule by one completed epoch."""
    return replace(schedule, epoch=schedule.epoch + 1)


def sigmoid(x) -> np.ndarray:
    return _np_sigmoid(np.asarray(x, dtype=np.float64))


def dbn_forward(x) -> np.ndarray:
    """u(sigmoid(x) - 0.5) with u(0) = 1."""
    return (sigmoid(x) - 0.5 >= 0).astype(np.float64)


def sbn_forward(x, v) -> np.ndarray:
    """u(sigmoid(x) - v) for uniform draws ``v`` of the same shape as ``x``."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != x.shape:
        raise ValueError(f"need one uniform draw per element: {v.shape} vs {x.shape}")
    return (sigmoid(x) - v >= 0).astype(np.float64)


def st_backward(upstream) -> np.ndarray:
    return np.asarray(upstream, dtype=np.float64)


def sigmoid_adjusted_st_backward(x, upstream, slope: float = 1.0) -> np.ndarray:
    """upstream * slope * s * (1 - s) with s = sigmoid(slope * x)."""
    if slope <= 0:
        raise ValueError("slope must be positive")
    s = sigmoid(slope * np.asarray(x, dtype=np.float64))
    return np.asarray(upstream, dtype=np.float64) * (slope * s * (1.0 - s))


def binary_neuron(x, kind: str = "deterministic", slope: float = 1.0,
                  estimator: str = "sigmoid_adjusted_st", v=None) -> Tensor:
    """Binary neuron as a graph op.

    For the stochastic kind ``v`` holds the uniform draws. The backward rule
    depends only on ``x``, the slope and the upstream gradient, never on the
    sampled outcome.
    """
    x = _as_tensor(x)
    kind = _KIND_ALIASES.get(kind, kind)
    if kind == "deterministic":
        out = dbn_forward(x.data)
    elif kind == "stochastic":
        if v is None:
            raise ValueError("stochastic binary neuron needs uniform draws")
        out = sbn_forward(x.data, v)
    else:
        raise ValueError(f"unknown binary neuron kind {kind!r}")
    if estimator == "sigmoid_adjusted_st":
        factor = sigmoid_adjusted_st_backward(x.data, 1.0, slope)
        vjp = lambda g, needs: (g * factor,)  # noqa: E731
    elif estimator == "st":
        vjp = lambda g, needs: (g,)  # noqa: E731
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    return make_node(out, (x,), vjp, "binary_neuron")


class BinaryNeuronLayer:
    """Output layer of binary neurons.

    The stochastic kind draws one uniform per element per call from its own
    Philox stream, so a run can be replayed from the seed alone.
    """

    def __init__(self, kind: str = "deterministic", estimator: str = "sigmoid_adjusted_st",
                 schedule: SlopeSchedule | None = None, rng: np.random.Generator | None = None):
        kind = _KIND_ALIASES.get(kind, kind)
        if kind not in KINDS:
            raise ValueError(f"unknown binary neuron kind {kind!r}")
        if estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {estimator!r}")
        self.kind = kind
        self.estimator = estimator
        self.schedule = schedule if schedule is not None else SlopeSchedule()
        if rng is None and kind == "stochastic":
            rng = np.random.Generator(np.random.Philox(0))
        self.rng = rng

    @property
    def slope(self) -> float:
        return self.schedule.slope

    def anneal(self) -> None:
        self.schedule = anneal_slope(self.schedule)

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None, v=None) -> Tensor:
        if self.kind == "stochastic" and v is None:
            v = (rng if rng is not None else self.rng).random(x.shape)
        return binary_neuron(x, self.kind, self.slope, self.estimator, v)
