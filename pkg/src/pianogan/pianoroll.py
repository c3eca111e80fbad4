"""Multi-track piano-roll data model, note conversion and the BPR1 file format.

A piano-roll is a binary array indexed ``[bar, time, pitch, track]``. Pitch
index 0 is a C, so pitch class is ``index % 12``. Tempo is not represented:
every beat has the same number of time steps.

BPR1 layout (all integers little-endian):

    bytes 0-3    magic ``b"BPR1"``
    bytes 4-23   uint32 extents: bars, steps_per_bar, pitches, tracks, steps_per_beat
    bytes 24-    cell values bit-packed row-major over (bar, time, pitch, track),
                 most significant bit first, zero-padded to a byte boundary

Real-valued rolls (raw generator output) use magic ``b"BPRF"`` with the same
header followed by float64 little-endian cell values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DimensionError, FormatError, OverlapError

TRACKS_8 = ("Drums", "Piano", "Guitar", "Bass", "Ensemble", "Reed", "Synth Lead", "Synth Pad")
TRACKS_5 = TRACKS_8[:5]
PITCH_CLASS_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")

MAGIC_BINARY = b"BPR1"
MAGIC_REAL = b"BPRF"
_HEADER = struct.Struct("<4s5I")
_MAX_CELLS = 1 << 32


@dataclass(frozen=True)
class Resolution:
    steps_per_beat: int = 24
    beats_per_bar: int = 4
    bars: int = 4
    pitches: int = 84
    lowest_pitch_name: str = "C1"
    tracks: tuple[str, ...] = TRACKS_8

    def __post_init__(self):
        object.__setattr__(self, "tracks", tuple(self.tracks))
        for name in ("steps_per_beat", "beats_per_bar", "bars", "pitches"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.pitches > 128:
            raise ConfigurationError("at most 128 pitches")
        if not self.tracks:
            raise ConfigurationError("at least one track")

    @property
    def steps_per_bar(self) -> int:
        return self.steps_per_beat * self.beats_per_bar

    @property
    def total_steps(self) -> int:
        return self.steps_per_bar * self.bars

    @property
    def n_tracks(self) -> int:
        return len(self.tracks)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.bars, self.steps_per_bar, self.pitches, self.n_tracks)

    def track_index(self, name_or_index) -> int:
        if isinstance(name_or_index, (int, np.integer)):
            idx = int(name_or_index)
            if not 0 <= idx < self.n_tracks:
                raise IndexError(f"track index {idx} out of range")
            return idx
        lowered = [t.lower() for t in self.tracks]
        try:
            return lowered.index(str(name_or_index).lower())
        except ValueError:
            raise KeyError(f"no track named {name_or_index!r} in {self.tracks}") from None


FULL_RESOLUTION = Resolution()
END_TO_END_RESOLUTION = Resolution(steps_per_beat=12, tracks=TRACKS_5)
DESK_RESOLUTION = Resolution(steps_per_beat=6, bars=1, pitches=24, lowest_pitch_name="C3",
                             tracks=("Piano", "Guitar"))


@dataclass(frozen=True, order=True)
class Note:
    track: int
    pitch: int
    onset: int
    duration: int

    def __post_init__(self):
        if self.duration < 1:
            raise ValueError("note duration must be >= 1")
        if self.onset < 0:
            raise ValueError("note onset must be >= 0")

    @property
    def end(self) -> int:
        return self.onset + self.duration


@dataclass(frozen=True)
class Pianoroll:
    """Immutable binary multi-track piano-roll."""

    resolution: Resolution
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape != self.resolution.shape:
            raise DimensionError(f"values {values.shape} do not match resolution {self.resolution.shape}")
        if values.dtype != np.uint8:
            if not np.all((values == 0) | (values == 1)):
                raise ValueError("piano-roll values must be 0 or 1")
            values = values.astype(np.uint8)
        else:
            values = values.copy()
            if values.max(initial=0) > 1:
                raise ValueError("piano-roll values must be 0 or 1")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __eq__(self, other):
        if not isinstance(other, Pianoroll):
            return NotImplemented
        return self.resolution == other.resolution and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.resolution, self.values.tobytes()))

    @property
    def timeline(self) -> np.ndarray:
        """``[total_steps, pitch, track]`` view with bars concatenated."""
        res = self.resolution
        return self.values.reshape(res.total_steps, res.pitches, res.n_tracks)

    def to_notes(self) -> list[Note]:
        return to_notes(self)

    def save(self, path) -> None:
        save(self, path)


def from_notes(notes, res: Resolution) -> Pianoroll:
    """Render notes; a note that ends exactly where the next note of the same
    pitch and track begins loses its last step, leaving a one-step pause."""
    total = res.total_steps
    by_row: dict[tuple[int, int], list[Note]] = {}
    for note in notes:
        if not 0 <= note.track < res.n_tracks:
            raise ValueError(f"track {note.track} out of range")
        if not 0 <= note.pitch < res.pitches:
            raise ValueError(f"pitch {note.pitch} out of range")
        if note.end > total:
            raise ValueError(f"note ends at {note.end}, beyond {total} steps")
        by_row.setdefault((note.track, note.pitch), []).append(note)

    timeline = np.zeros((total, res.pitches, res.n_tracks), dtype=np.uint8)
    for (track, pitch), row in by_row.items():
        row.sort(key=lambda n: n.onset)
        for current, following in zip(row, row[1:] + [None]):
            end = current.end
            if following is not None:
                if following.onset < end:
                    raise OverlapError(
                        f"notes at onsets {current.onset} and {following.onset} overlap "
                        f"(track {track}, pitch {pitch})"
                    )
                if following.onset == end:
                    end -= 1
            timeline[current.onset:end, pitch, track] = 1
    return Pianoroll(res, timeline.reshape(res.shape))


def _runs(timeline: np.ndarray):
    """Onset and offset indices of active runs along axis 0, per column."""
    steps = timeline.shape[0]
    flat = timeline.reshape(steps, -1).T.astype(np.int8)
    padded = np.pad(flat, ((0, 0), (1, 1)))
    diff = np.diff(padded, axis=1)
    on_rows, on_cols = np.nonzero(diff == 1)
    off_rows, off_cols = np.nonzero(diff == -1)
    return on_rows, on_cols, off_cols - on_cols


def to_notes(roll: Pianoroll) -> list[Note]:
    """One note per maximal run of active steps in each (pitch, track) row.

    Runs continue across bar lines.
    """
    res = roll.resolution
    rows, onsets, durations = _runs(roll.timeline)
    pitches, tracks = np.divmod(rows, res.n_tracks)
    return [
        Note(int(t), int(p), int(o), int(d))
        for p, t, o, d in zip(pitches, tracks, onsets, durations)
    ]


def note_durations(timeline: np.ndarray) -> np.ndarray:
    """Durations of all notes in a ``[time, ...]`` binary array."""
    return _runs(timeline)[2]


# -- file format -----------------------------------------------------------------
def _header(magic: bytes, res: Resolution) -> bytes:
    return _HEADER.pack(magic, res.bars, res.steps_per_bar, res.pitches, res.n_tracks, res.steps_per_beat)


def save(roll: Pianoroll, path) -> None:
    bits = np.packbits(roll.values.reshape(-1), bitorder="big")
    Path(path).write_bytes(_header(MAGIC_BINARY, roll.resolution) + bits.tobytes())


def save_real(values: np.ndarray, res: Resolution, path) -> None:
    """Write real-valued cell values (e.g. raw sigmoid outputs) in the BPRF variant."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != res.shape:
        raise DimensionError(f"values {values.shape} do not match resolution {res.shape}")
    Path(path).write_bytes(_header(MAGIC_REAL, res) + values.astype("<f8").tobytes())


def _parse_header(blob: bytes, tracks=None, lowest_pitch_name: str = "C1"):
    if len(blob) < 4:
        raise FormatError("file too short for a piano-roll header")
    magic = blob[:4]
    if magic not in (MAGIC_BINARY, MAGIC_REAL):
        raise FormatError(f"bad magic {magic!r}")
    if len(blob) < _HEADER.size:
        raise FormatError("truncated header")
    _, bars, steps_per_bar, pitches, n_tracks, steps_per_beat = _HEADER.unpack_from(blob)
    extents = (bars, steps_per_bar, pitches, n_tracks, steps_per_beat)
    if min(extents) < 1:
        raise FormatError(f"zero extent in header {extents}")
    if pitches > 128 or steps_per_bar % steps_per_beat:
        raise FormatError(f"inconsistent extents {extents}")
    if bars * steps_per_bar * pitches * n_tracks > _MAX_CELLS:
        raise FormatError(f"extent overflow {extents}")
    if tracks is None:
        tracks = tuple(f"track{i}" for i in range(n_tracks))
    elif len(tracks) != n_tracks:
        raise FormatError(f"file has {n_tracks} tracks, {len(tracks)} names given")
    res = Resolution(steps_per_beat=steps_per_beat, beats_per_bar=steps_per_bar // steps_per_beat,
                     bars=bars, pitches=pitches, lowest_pitch_name=lowest_pitch_name, tracks=tuple(tracks))
    return magic, res


def load_any(path, tracks=None, lowest_pitch_name: str = "C1"):
    """Load either variant; returns ``(values, resolution, is_binary)``."""
    blob = Path(path).read_bytes()
    magic, res = _parse_header(blob, tracks, lowest_pitch_name)
    n = int(np.prod(res.shape))
    payload = blob[_HEADER.size:]
    if magic == MAGIC_BINARY:
        need = (n + 7) // 8
        if len(payload) < need:
            raise FormatError(f"truncated payload: {len(payload)} of {need} bytes")
        if len(payload) > need:
            raise FormatError("trailing bytes after payload")
        bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=n, bitorder="big")
        return bits.reshape(res.shape), res, True
    need = 8 * n
    if len(payload) != need:
        raise FormatError(f"truncated payload: {len(payload)} of {need} bytes")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(res.shape), res, False


def load(path, tracks=None, lowest_pitch_name: str = "C1") -> Pianoroll:
    values, res, is_binary = load_any(path, tracks, lowest_pitch_name)
    if not is_binary:
        raise FormatError(f"{path} holds real values; binarize before loading as a piano-roll")
    return Pianoroll(res, values)


def write_pgm(values: np.ndarray, path) -> None:
    """Grayscale image, one pixel per cell: time across, pitch up, tracks stacked.

    Accepts ``[bar, time, pitch, track]`` values in [0, 1].
    """
    values = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    bars, steps, pitches, tracks = values.shape
    timeline = values.reshape(bars * steps, pitches, tracks)
    blocks = [timeline[:, ::-1, t].T for t in range(tracks)]
    image = np.concatenate(blocks, axis=0)
    pixels = (255 - np.round(image * 255)).astype(np.uint8)
    header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + pixels.tobytes())
