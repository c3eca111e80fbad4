"""Seeded synthetic corpus of chord-progression piano-rolls.

Each sample draws a major key and a progression of diatonic chords, then
renders every track according to a role inferred from its name:

* drums: hits on a beat grid
* bass: chord roots in the low register
* melody (reed, synth lead): single chord tones
* pad (ensemble, synth pad): chords held for each chord segment
* comp (everything else): rhythmic chords

Rhythmic notes are always followed by at least one silent step, so the
sounding lengths listed in ``note_steps`` are exactly the note durations a
metric sees. That makes corpus QN and PP controllable by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pianoroll import Note, Pianoroll, Resolution, from_notes

MAJOR_SCALE = (0, 2, 4, 5, 7, 9, 11)
CHORD_DEGREES = (0, 1, 3, 4, 5)  # I, ii, IV, V, vi


@dataclass(frozen=True)
class SynthStyle:
    note_steps: tuple[int, ...] = (3, 4, 5, 6, 8, 11)
    note_weights: tuple[float, ...] | None = None
    chord_beats: tuple[int, ...] = (1, 2, 4)
    chord_size: int = 3
    sustain: bool = False
    rest_prob: float = 0.15
    drum_steps: int = 1
    drum_density: float = 0.6

    def __post_init__(self):
        if not self.note_steps or min(self.note_steps) < 1:
            raise ValueError("note_steps must hold positive lengths")
        if self.note_weights is not None and len(self.note_weights) != len(self.note_steps):
            raise ValueError("note_weights must match note_steps")
        if not self.chord_beats or min(self.chord_beats) < 1:
            raise ValueError("chord_beats must hold positive lengths")
        if self.chord_size not in (3, 4):
            raise ValueError("chord_size must be 3 or 4")


def track_role(name: str) -> str:
    lowered = name.lower()
    if "drum" in lowered:
        return "drums"
    if "bass" in lowered:
        return "bass"
    if lowered in ("reed", "synth lead", "lead", "melody"):
        return "melody"
    if lowered in ("ensemble", "synth pad", "pad", "strings"):
        return "pad"
    return "comp"


def _register(res: Resolution, role: str) -> int:
    """Lowest pitch index (a C) of the octave a role plays in."""
    octaves = res.pitches // 12
    if octaves < 1:
        raise ValueError("synthetic corpus needs at least one full octave of pitches")
    preferred = {"bass": 1, "comp": 3, "pad": 3, "melody": 4, "drums": 2}[role]
    if role == "bass":
        octave = min(preferred, max(octaves - 2, 0))
    else:
        octave = min(preferred, octaves - 1)
    return 12 * octave


def _chord_classes(key: int, degree: int, size: int) -> list[int]:
    return [(key + MAJOR_SCALE[(degree + 2 * i) % 7]) % 12 for i in range(size)]


def _progression(rng, res: Resolution, style: SynthStyle):
    """List of (start_step, end_step, pitch classes, root class)."""
    key = int(rng.integers(12))
    segments = []
    total_beats = res.bars * res.beats_per_bar
    beat = 0
    while beat < total_beats:
        length = int(rng.choice(style.chord_beats))
        length = min(length, total_beats - beat)
        degree = int(rng.choice(CHORD_DEGREES)) if beat else 0
        classes = _chord_classes(key, degree, style.chord_size)
        start = beat * res.steps_per_beat
        end = (beat + length) * res.steps_per_beat
        segments.append((start, end, classes, classes[0]))
        beat += length
    return segments


def _rhythm(rng, start: int, end: int, cursor: int, style: SynthStyle):
    """Onsets and lengths inside [start, end); notes never touch each other."""
    weights = None
    if style.note_weights is not None:
        w = np.asarray(style.note_weights, dtype=float)
        weights = w / w.sum()
    out = []
    pos = max(start, cursor)
    while pos < end:
        choices = [d for d in style.note_steps if pos + d <= end]
        if not choices:
            break
        if weights is None:
            d = int(rng.choice(choices))
        else:
            idx = [i for i, s in enumerate(style.note_steps) if pos + s <= end]
            p = weights[idx] / weights[idx].sum()
            d = int(style.note_steps[int(rng.choice(idx, p=p))])
        out.append((pos, d))
        pos += d + 1
        if rng.random() < style.rest_prob:
            pos += 1
    return out, pos


def _held_chords(track: int, base: int, segments) -> list[Note]:
    """Chords held for their whole segment; tones shared with the next chord are tied."""
    notes, held = [], {}
    for start, _, classes, _ in segments:
        current = {base + pc for pc in classes}
        for pitch in sorted(set(held) - current):
            onset = held.pop(pitch)
            notes.append(Note(track, pitch, onset, start - onset))
        for pitch in sorted(current):
            held.setdefault(pitch, start)
    end = segments[-1][1] if segments else 0
    notes.extend(Note(track, p, onset, end - onset) for p, onset in sorted(held.items()))
    return notes


def synth_sample(rng: np.random.Generator, res: Resolution, style: SynthStyle) -> Pianoroll:
    segments = _progression(rng, res, style)
    total = res.total_steps
    notes: list[Note] = []
    for track, name in enumerate(res.tracks):
        role = track_role(name)
        base = _register(res, role)
        if role == "drums":
            step = max(res.steps_per_beat // 2, 1)
            kit = [base + pc for pc in (0, 2, 6) if base + pc < res.pitches]
            for onset in range(0, total, step):
                for pitch in kit:
                    if rng.random() < style.drum_density:
                        notes.append(Note(track, pitch, onset, min(style.drum_steps, step, total - onset)))
            continue
        if role == "pad" or (style.sustain and role == "comp"):
            notes.extend(_held_chords(track, base, segments))
            continue
        cursor = 0
        for start, end, classes, root in segments:
            rhythm, cursor = _rhythm(rng, start, end, cursor, style)
            for onset, length in rhythm:
                if role == "bass":
                    pitches = [base + root]
                elif role == "melody":
                    pitches = [base + int(rng.choice(classes))]
                else:
                    pitches = [base + pc for pc in classes]
                notes.extend(Note(track, p, onset, length) for p in pitches)
    return from_notes(notes, res)


def synth_corpus(seed: int, n_samples: int, res: Resolution, style: SynthStyle | None = None) -> list[Pianoroll]:
    """Deterministic corpus: the same seed always yields the same rolls."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    style = style if style is not None else SynthStyle()
    rng = np.random.default_rng(seed)
    return [synth_sample(rng, res, style) for _ in range(n_samples)]


def corpus_array(rolls) -> np.ndarray:
    """Stack rolls into a float64 ``[n, bar, time, pitch, track]`` array."""
    return np.stack([r.values for r in rolls]).astype(np.float64)
