"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import ESTIMATOR_OPS, NON_DIFFERENTIABLE_OPS, Tensor, grad, graph_ops, record_kinks


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_probed: int
    skipped: bool = False
    reason: str = ""
    n_straddling: int = 0
    n_wanted: int = 0

    def passed(self, tol: float = 1e-4) -> bool:
        return (not self.skipped) and self.max_rel_error < tol and self.n_probed > 0


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _resolution_floor(plus: float, minus: float, h: float) -> float:
    """Smallest derivative the quotient can measure to 1e-4 relative accuracy.

    Rounding in f leaves the quotient uncertain by a few ``eps * |f| / h``;
    anything below 1e4 times that is indistinguishable from zero.
    """
    noise = 4.0 * np.finfo(np.float64).eps * max(abs(plus), abs(minus)) / h
    return noise / 1e-4


def _masks_equal(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def finite_diff_check(f: Callable[[], Tensor], params: Tensor | Sequence[Tensor], h: float = 1e-3,
                      n_probe: int | None = 20, rng: np.random.Generator | None = None,
                      floor: float = 1e-8, kink_guard: bool = True) -> GradCheckResult:
    """Compare d f / d params against (f(p + h e) - f(p - h e)) / 2h.

    ``f`` is re-evaluated for every probe, so it must rebuild its graph from
    the current parameter values. ``n_probe`` coordinates are drawn per
    parameter tensor (all of them when None). Graphs containing a hard step
    or an estimator are reported as skipped rather than compared.

    With ``kink_guard`` a probe whose +h or -h point switches any relu-type
    unit on or off is not compared, since the difference quotient there
    measures the kink rather than the derivative; another coordinate of the
    same tensor is drawn instead. Such probes are counted in
    ``n_straddling``.

    The relative error's denominator is floored at ``floor`` and at the
    quotient's rounding resolution, so a coordinate whose true derivative is
    zero (a bias feeding batch normalization) is not scored on noise.
    """
    params = [params] if isinstance(params, Tensor) else list(params)
    rng = rng if rng is not None else np.random.default_rng(0)
    with record_kinks() as base_masks:
        out = f()
    if out.size != 1:
        raise ValueError("finite_diff_check needs a scalar-valued function")
    ops = graph_ops(out)
    blocked = sorted(ops & (NON_DIFFERENTIABLE_OPS | ESTIMATOR_OPS))
    if blocked:
        return GradCheckResult(float("nan"), 0, skipped=True, reason=f"non-differentiable ops: {blocked}")
    analytic = [g.data.copy() for g in grad(out, params)]

    def evaluate():
        with record_kinks() as masks:
            value = float(f().data)
        return value, masks

    # f may differentiate internally (gradient penalty), so no no_grad() here
    worst, probed, straddling, wanted = 0.0, 0, 0, 0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        if not np.shares_memory(flat, p.data):
            raise ValueError("finite_diff_check needs contiguous parameter storage")
        want = flat.size if n_probe is None else min(n_probe, flat.size)
        wanted += want
        done = 0
        for i in rng.permutation(flat.size):
            if done == want:
                break
            original = flat[i]
            flat[i] = original + h
            plus, plus_masks = evaluate()
            flat[i] = original - h
            minus, minus_masks = evaluate()
            flat[i] = original
            if kink_guard and not (_masks_equal(plus_masks, base_masks) and _masks_equal(minus_masks, base_masks)):
                straddling += 1
                continue
            numeric = (plus - minus) / (2.0 * h)
            worst = max(worst, relative_error(float(g.reshape(-1)[i]), numeric,
                                              max(floor, _resolution_floor(plus, minus, h))))
            probed += 1
            done += 1
    return GradCheckResult(worst, probed, n_straddling=straddling, n_wanted=wanted)
