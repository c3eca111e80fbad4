import numpy as np
import pytest

from pianogan.evaluation import polyphonicity, qualified_note_rate
from pianogan.pianoroll import DESK_RESOLUTION, FULL_RESOLUTION, Pianoroll, note_durations
from pianogan.synth import SynthStyle, corpus_array, synth_corpus


def test_same_seed_same_corpus():
    assert synth_corpus(3, 20, DESK_RESOLUTION) == synth_corpus(3, 20, DESK_RESOLUTION)
    assert synth_corpus(3, 20, DESK_RESOLUTION) != synth_corpus(4, 20, DESK_RESOLUTION)


def test_long_notes_give_unit_qn():
    style = SynthStyle(note_steps=(3, 4, 6))
    rolls = synth_corpus(0, 30, DESK_RESOLUTION, style)
    for roll in rolls:
        assert note_durations(roll.timeline).min() >= 3
        assert qualified_note_rate(roll) == 1.0


def test_four_pitch_sustained_chords_give_unit_pp():
    style = SynthStyle(chord_size=4, sustain=True)
    for roll in synth_corpus(1, 30, DESK_RESOLUTION, style):
        piano = Pianoroll(DESK_RESOLUTION, roll.values * np.array([1, 0], np.uint8))
        assert polyphonicity(piano) == 1.0


def test_default_corpus_statistics():
    data = corpus_array(synth_corpus(0, 500, DESK_RESOLUTION))
    assert data.shape == (500, 1, 24, 24, 2)
    assert np.mean([qualified_note_rate(r) for r in data]) >= 0.95


def test_full_resolution_sample():
    roll = synth_corpus(0, 1, FULL_RESOLUTION)[0]
    assert roll.values.shape == (4, 96, 84, 8)
    assert roll.values.sum() > 0


def test_style_validation():
    with pytest.raises(ValueError):
        SynthStyle(note_steps=())
    with pytest.raises(ValueError):
        SynthStyle(chord_size=5)
    with pytest.raises(ValueError):
        synth_corpus(0, 0, DESK_RESOLUTION)
