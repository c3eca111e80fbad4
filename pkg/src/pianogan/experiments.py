"""Desk-scale comparison of test-time binarization against trained binary neurons.

One pretraining run per seed is shared by three comparisons: Bernoulli
sampling and hard thresholding of the pretrained generator's outputs, a
refiner with deterministic binary neurons, and a refiner with stochastic
binary neurons. All four are scored on the same latent draws.
"""

from __future__ import annotations

import logging
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .config import RunConfig
from .evaluation import qualified_note_rate
from .pianoroll import DESK_RESOLUTION
from .synth import corpus_array, synth_corpus
from .training import Trainer

log = logging.getLogger(__name__)

_EVAL_STREAM = 1000


@dataclass
class TrendResult:
    seed: int
    qn: dict[str, float]
    corpus_qn: float
    provenance_checks: dict[str, int] = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def margin_over_bs(self) -> float:
        return self.qn["refiner_dbn"] - self.qn["bs"]

    def passed(self, min_margin: float = 0.05) -> bool:
        return self.margin_over_bs >= min_margin and self.qn["refiner_dbn"] > self.qn["refiner_sbn"]


def mean_qn(rolls: np.ndarray) -> float:
    values = np.array([qualified_note_rate(r) for r in rolls])
    values = values[~np.isnan(values)]
    return float(values.mean()) if values.size else math.nan


def _eval_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, _EVAL_STREAM])))


def _attach(trainer: Trainer, variant: str, observer) -> None:
    if observer is not None:
        trainer.on_fake = lambda stage, batch: observer(variant, stage, batch)


def trend_config(seed: int, **overrides) -> RunConfig:
    return RunConfig(seed=seed, resolution="desk", scale="1/8", strategy="two_stage", bn="dbn",
                     steps_stage1=2000, steps_stage2=1000, synth_samples=500).replace(**overrides)


def trend_experiment(seed: int, cfg: RunConfig | None = None, n_eval: int = 100, work_dir=None,
                     observer: Callable[[str, str, np.ndarray], None] | None = None) -> TrendResult:
    """Run the comparison for one seed.

    ``observer(variant, stage, batch)`` sees every fake batch handed to a
    critic, with ``variant`` being ``"dbn"`` or ``"sbn"``.
    """
    cfg = cfg if cfg is not None else trend_config(seed)
    started = time.perf_counter()
    data = corpus_array(synth_corpus(cfg.synth_seed, cfg.synth_samples, DESK_RESOLUTION))
    corpus_qn = mean_qn(data)
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(work_dir) if work_dir is not None else Path(tmp)
        dbn = Trainer(cfg.replace(bn="dbn"), data, root / "dbn")
        _attach(dbn, "dbn", observer)
        dbn.run(until_step=cfg.steps_stage1)
        pretrained = root / "dbn" / "checkpoints" / "pretrain_final.bgck"
        qn = {
            "bs": mean_qn(dbn.sample(n_eval, "bs", _eval_rng(seed))),
            "ht": mean_qn(dbn.sample(n_eval, "ht", _eval_rng(seed))),
        }
        log.info("seed %d pretrained: %s", seed, qn)
        dbn.run()
        qn["refiner_dbn"] = mean_qn(dbn.sample(n_eval, "refiner", _eval_rng(seed)))

        sbn = Trainer(cfg.replace(bn="sbn"), data, root / "sbn")
        sbn.load(pretrained)
        _attach(sbn, "sbn", observer)
        sbn.run()
        qn["refiner_sbn"] = mean_qn(sbn.sample(n_eval, "refiner", _eval_rng(seed)))
    checks = {"dbn": dbn.state.provenance_checks, "sbn": sbn.state.provenance_checks}
    result = TrendResult(seed, qn, corpus_qn, checks, time.perf_counter() - started)
    log.info("seed %d: %s (%.0f s)", seed, qn, result.seconds)
    return result


__all__ = ["TrendResult", "mean_qn", "trend_config", "trend_experiment"]
