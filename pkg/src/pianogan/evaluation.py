"""Test-time binarization baselines and the QN / PP / TD metrics.

* QN (qualified note rate): share of notes lasting at least three steps,
  pooled over all tracks of a sample.
* PP (polyphonicity): share of steps where a track sounds three or more
  pitches, averaged over the non-empty tracks.
* TD (tonal distance): mean distance between two tracks' per-beat tonal
  centroids.

A metric with nothing to measure (no notes, no non-empty track, no beat
where both tracks sound) is undefined and reported as ``nan``; aggregation
skips undefined entries.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError
from .pianoroll import Pianoroll, Resolution, note_durations

METRICS = ("QN", "PP", "TD")
QUALIFIED_STEPS = 3
POLYPHONY_PITCHES = 3
TONAL_RADII = (1.0, 1.0, 0.5)
TONAL_ANGLES = (7 * math.pi / 6, 3 * math.pi / 2, 2 * math.pi / 3)


# -- binarization --------------------------------------------------------------
@dataclass
class BinarizationStrategy:
    """``hard_threshold`` (HT) or ``bernoulli`` (BS)."""

    kind: str = "hard_threshold"
    threshold: float = 0.5
    rng: np.random.Generator | None = None

    def __post_init__(self):
        aliases = {"ht": "hard_threshold", "bs": "bernoulli"}
        self.kind = aliases.get(self.kind, self.kind)
        if self.kind not in ("hard_threshold", "bernoulli"):
            raise ValueError(f"unknown binarization {self.kind!r}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.kind == "bernoulli" and self.rng is None:
            self.rng = np.random.Generator(np.random.Philox(0))

    @property
    def label(self) -> str:
        return "HT" if self.kind == "hard_threshold" else "BS"

    def apply(self, raw) -> np.ndarray:
        return apply_binarization(raw, self)


def apply_binarization(raw, strategy: BinarizationStrategy) -> np.ndarray:
    """Binarize values in [0, 1]. HT keeps ties at the threshold; BS draws
    one uniform per cell and keeps the cell with probability ``raw``."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size and not (np.all(raw >= 0.0) and np.all(raw <= 1.0)):
        raise DomainError("binarization input must lie in [0, 1]")
    if strategy.kind == "hard_threshold":
        return (raw >= strategy.threshold).astype(np.uint8)
    return (strategy.rng.random(raw.shape) < raw).astype(np.uint8)


# -- metrics -------------------------------------------------------------------
def _values(roll) -> np.ndarray:
    values = roll.values if isinstance(roll, Pianoroll) else np.asarray(roll)
    if values.ndim != 4:
        raise DomainError(f"expected [bar, time, pitch, track] values, got shape {values.shape}")
    return values


def _timeline(roll) -> np.ndarray:
    values = _values(roll)
    bars, steps, pitches, tracks = values.shape
    return values.reshape(bars * steps, pitches, tracks)


def note_counts(roll, min_steps: int = QUALIFIED_STEPS) -> tuple[int, int]:
    """(qualified notes, all notes) pooled over tracks."""
    durations = note_durations(_timeline(roll))
    return int(np.count_nonzero(durations >= min_steps)), int(durations.size)


def qualified_note_rate(roll, min_steps: int = QUALIFIED_STEPS) -> float:
    qualified, total = note_counts(roll, min_steps)
    return qualified / total if total else math.nan


def qualified_note_rate_per_track(roll, min_steps: int = QUALIFIED_STEPS) -> np.ndarray:
    timeline = _timeline(roll)
    out = np.full(timeline.shape[2], math.nan)
    for t in range(timeline.shape[2]):
        durations = note_durations(timeline[:, :, t])
        if durations.size:
            out[t] = np.count_nonzero(durations >= min_steps) / durations.size
    return out


def polyphonicity(roll, pooled: bool = False, min_pitches: int = POLYPHONY_PITCHES) -> float:
    """Per-track share of polyphonic steps, averaged over non-empty tracks.

    With ``pooled=True`` the tracks are merged first (a pitch counts once
    however many tracks sound it).
    """
    timeline = _timeline(roll)
    steps = timeline.shape[0]
    if pooled:
        merged = timeline.any(axis=2)
        if not merged.any():
            return math.nan
        return float(np.count_nonzero(merged.sum(axis=1) >= min_pitches)) / steps
    active = timeline.any(axis=(0, 1))
    if not active.any():
        return math.nan
    dense = np.count_nonzero(timeline.sum(axis=1) >= min_pitches, axis=0)
    # exactly rounded sum, so the value does not depend on track order
    shares = dense[active] / steps
    return math.fsum(shares) / shares.size


def chroma(values: np.ndarray, steps_per_beat: int) -> np.ndarray:
    """Per-beat pitch-class counts ``[bar, beats, 12, track]`` of one roll."""
    values = np.asarray(values, dtype=np.float64)
    bars, steps, pitches, tracks = values.shape
    if steps % steps_per_beat:
        raise DomainError(f"{steps} steps per bar is not a whole number of beats")
    per_beat = values.reshape(bars, steps // steps_per_beat, steps_per_beat, pitches, tracks).sum(axis=2)
    remainder = (-pitches) % 12
    per_beat = np.pad(per_beat, ((0, 0), (0, 0), (0, remainder), (0, 0)))
    return per_beat.reshape(bars, steps // steps_per_beat, -1, 12, tracks).sum(axis=2)


def tonal_basis() -> np.ndarray:
    """``[12, 6]`` matrix mapping a chroma vector to its tonal centroid."""
    classes = np.arange(12)[:, None]
    angles = classes * np.asarray(TONAL_ANGLES)[None, :]
    radii = np.asarray(TONAL_RADII)
    cols = [radii * np.sin(angles), radii * np.cos(angles)]
    # interleave as (sin, cos) per circle
    return np.stack(cols, axis=2).reshape(12, 6)


def tonal_centroid(chroma_vectors: np.ndarray) -> np.ndarray:
    """L1-normalise each chroma vector (last axis) and map it to 6-D."""
    chroma_vectors = np.asarray(chroma_vectors, dtype=np.float64)
    norms = chroma_vectors.sum(axis=-1, keepdims=True)
    normalised = np.divide(chroma_vectors, norms, out=np.zeros_like(chroma_vectors), where=norms > 0)
    return normalised @ tonal_basis()


def _track(res: Resolution | None, track, n_tracks: int) -> int:
    try:
        if res is not None:
            return res.track_index(track)
        idx = int(track)
        if not 0 <= idx < n_tracks:
            raise IndexError(idx)
        return idx
    except (KeyError, IndexError, ValueError, TypeError) as exc:
        raise DomainError(f"no track {track!r}") from exc


def tonal_distance(roll, track_a=0, track_b=1, steps_per_beat: int | None = None) -> float:
    """Mean centroid distance over beats where both tracks sound."""
    values = _values(roll)
    res = roll.resolution if isinstance(roll, Pianoroll) else None
    if steps_per_beat is None:
        if res is None:
            raise DomainError("steps_per_beat is required for raw arrays")
        steps_per_beat = res.steps_per_beat
    a = _track(res, track_a, values.shape[3])
    b = _track(res, track_b, values.shape[3])
    c = chroma(values[..., [a, b]], steps_per_beat).reshape(-1, 12, 2)
    sounding = (c.sum(axis=1) > 0).all(axis=1)
    if not sounding.any():
        return math.nan
    za = tonal_centroid(c[sounding, :, 0])
    zb = tonal_centroid(c[sounding, :, 1])
    return float(np.mean(np.linalg.norm(za - zb, axis=1)))


# -- reports -----------------------------------------------------------------------
@dataclass(frozen=True)
class SampleMetrics:
    sample_id: int
    qn: float
    pp: float
    td: float
    notes: int
    qualified: int


@dataclass
class MetricsReport:
    model: str
    strategy: str
    rows: list[SampleMetrics] = field(default_factory=list)

    def column(self, metric: str) -> np.ndarray:
        key = {"QN": "qn", "PP": "pp", "TD": "td"}[metric]
        return np.array([getattr(r, key) for r in self.rows], dtype=np.float64)

    def n_defined(self, metric: str) -> int:
        return int(np.count_nonzero(~np.isnan(self.column(metric))))

    def mean(self, metric: str) -> float:
        col = self.column(metric)
        col = col[~np.isnan(col)]
        return float(col.mean()) if col.size else math.nan

    @property
    def aggregate(self) -> dict[str, float]:
        return {m: self.mean(m) for m in METRICS}

    @property
    def counts(self) -> dict[str, int]:
        return {
            "notes": sum(r.notes for r in self.rows),
            "qualified_notes": sum(r.qualified for r in self.rows),
            "samples": len(self.rows),
        }


def sample_metrics(sample_id: int, values, steps_per_beat: int, pair=(0, 1),
                   pooled_pp: bool = False) -> SampleMetrics:
    """All metrics of one ``[bar, time, pitch, track]`` roll; ``pair`` holds track indices."""
    qualified, notes = note_counts(values)
    qn = qualified / notes if notes else math.nan
    td = tonal_distance(values, *pair, steps_per_beat=steps_per_beat)
    return SampleMetrics(sample_id, qn, polyphonicity(values, pooled=pooled_pp), td, notes, qualified)


def _is_binary(values: np.ndarray) -> bool:
    return bool(np.all((values == 0) | (values == 1)))


def evaluate_model(sampler: Callable[[int], np.ndarray] | np.ndarray | Iterable, res: Resolution,
                   n_samples: int = 800, strategy: BinarizationStrategy | None = None,
                   pair=("Piano", "Guitar"), model: str = "model", strategy_label: str | None = None,
                   pooled_pp: bool = False) -> MetricsReport:
    """Score ``n_samples`` rolls.

    ``sampler`` is either a callable returning ``[n, bar, time, pitch, track]``
    values, an array of that shape, or an iterable of :class:`Pianoroll`.
    Real-valued samples need a binarization ``strategy``.
    """
    if callable(sampler):
        values = np.asarray(sampler(n_samples))
    elif isinstance(sampler, np.ndarray):
        values = sampler[:n_samples]
    else:
        values = np.stack([r.values if isinstance(r, Pianoroll) else np.asarray(r) for r in sampler])[:n_samples]
    if values.ndim != 5 or values.shape[1:] != res.shape:
        raise DomainError(f"samples of shape {values.shape} do not match resolution {res.shape}")
    if strategy is not None:
        values = apply_binarization(values, strategy)
        label = strategy.label
    else:
        if not _is_binary(values):
            raise DomainError("real-valued samples need a binarization strategy")
        label = "none"
    values = values.astype(np.uint8)
    idx = (_track(res, pair[0], res.n_tracks), _track(res, pair[1], res.n_tracks))
    report = MetricsReport(model, strategy_label or label)
    for i, v in enumerate(values):
        report.rows.append(sample_metrics(i, v, res.steps_per_beat, idx, pooled_pp=pooled_pp))
    return report


def _fmt(value: float) -> str:
    return "NA" if math.isnan(value) else repr(float(value))


def emit_report(reports: MetricsReport | Sequence[MetricsReport], path, fmt: str = "csv") -> Path:
    """Write ``model,strategy,metric,mean,n_defined`` rows or a text table."""
    reports = [reports] if isinstance(reports, MetricsReport) else list(reports)
    path = Path(path)
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["model", "strategy", "metric", "mean", "n_defined"])
            for r in reports:
                for metric in METRICS:
                    writer.writerow([r.model, r.strategy, metric, _fmt(r.mean(metric)), r.n_defined(metric)])
    elif fmt == "text_table":
        path.write_text(format_table(reports))
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def format_table(reports: Sequence[MetricsReport]) -> str:
    """Metrics as rows, one column per (model, strategy)."""
    heads = [f"{r.model}/{r.strategy}" for r in reports]
    width = max([len(h) for h in heads] + [6])
    lines = ["metric  " + "  ".join(h.rjust(width) for h in heads)]
    for metric in METRICS:
        cells = []
        for r in reports:
            m = r.mean(metric)
            cells.append(("NA" if math.isnan(m) else f"{m:.2f}").rjust(width))
        lines.append(f"{metric:<6}  " + "  ".join(cells))
    return "\n".join(lines) + "\n"


def read_report_csv(path) -> list[dict]:
    rows = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            row["mean"] = math.nan if row["mean"] == "NA" else float(row["mean"])
            row["n_defined"] = int(row["n_defined"])
            rows.append(row)
    return rows


__all__ = [
    "METRICS", "BinarizationStrategy", "MetricsReport", "SampleMetrics", "apply_binarization", "chroma",
    "emit_report", "evaluate_model", "format_table", "note_counts", "polyphonicity", "qualified_note_rate",
    "qualified_note_rate_per_track", "read_report_csv", "sample_metrics", "tonal_basis", "tonal_centroid",
    "tonal_distance",
]
