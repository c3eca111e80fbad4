"""Adam optimiser over named parameter groups."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from ..errors import NonFiniteError
from .tensor import Parameter


class Adam:
    """Adam with bias correction.

    Defaults follow the WGAN-GP convention (lr 1e-4, betas 0.5/0.9).
    """

    def __init__(self, params: Mapping[str, Parameter], lr: float = 1e-4,
                 beta1: float = 0.5, beta2: float = 0.9, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        """Apply one update; ``grads`` maps parameter names to gradient arrays."""
        for key, g in grads.items():
            if not np.all(np.isfinite(g)):
                bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
                raise NonFiniteError(f"adam step {self.t + 1}: {bad} non-finite entries in gradient of {key}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correction1 = 1.0 - b1**self.t
        correction2 = 1.0 - b2**self.t
        for key, p in self.params.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[key]
            v = self.v[key]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)

    def reset(self) -> None:
        self.t = 0
        for key in self.params:
            self.m[key][...] = 0.0
            self.v[key][...] = 0.0

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for key in self.params:
            out[f"m/{key}"] = self.m[key]
            out[f"v/{key}"] = self.v[key]
        return out

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray], t: int) -> None:
        self.t = int(t)
        for key in self.params:
            self.m[key][...] = arrays[f"m/{key}"]
            self.v[key][...] = arrays[f"v/{key}"]
