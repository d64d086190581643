"""Synthetic melody-over-accompaniment corpus with a known melody voice."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .chords import merge_chords
from .midi import CHORD_TEMPLATES
from .score import NoteEvent, Quality, Score

# progressions as (semitones above the key, quality), one entry per chord change
DEFAULT_PROGRESSIONS = (
    ((0, "maj"), (7, "maj"), (9, "min"), (5, "maj")),
    ((9, "min"), (5, "maj"), (0, "maj"), (7, "maj")),
    ((0, "maj"), (9, "min"), (5, "maj"), (7, "dom7")),
    ((2, "min7"), (7, "dom7"), (0, "maj7"), (0, "maj7")),
    ((0, "maj"), (5, "maj"), (7, "maj"), (0, "maj")),
)

MAJOR_SCALE = (0, 2, 4, 5, 7, 9, 11)


@dataclass(frozen=True)
class SyntheticCorpusConfig:
    """Shape of the generated pieces.

    Every beat carries a block chord voiced over ``accompaniment_range`` and
    doubled by each of ``accompaniment_instruments``, a bass note drawn from
    the chord tones (so the inversion is random), and one or two melody notes
    above the accompaniment. The melody is the only voice played by
    ``melody_instrument``.
    """

    n_pieces: int = 50
    beats: int = 8
    beats_per_chord: int = 2
    melody_range: tuple[int, int] = (72, 88)
    accompaniment_range: tuple[int, int] = (48, 71)
    bass_range: tuple[int, int] = (36, 47)
    melody_instrument: int = 36
    accompaniment_instruments: tuple[int, ...] = (0, 24, 30)
    bass_instrument: int = 16
    progressions: tuple = field(default=DEFAULT_PROGRESSIONS)
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n_pieces", "beats", "beats_per_chord"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.accompaniment_instruments:
            raise ValueError("at least one accompaniment instrument is required")
        if not self.progressions:
            raise ValueError("the progression pool is empty")
        lo_m, _ = self.melody_range
        _, hi_a = self.accompaniment_range
        if lo_m <= hi_a:
            raise ValueError("the melody range must lie above the accompaniment range")
        if self.melody_instrument in (*self.accompaniment_instruments, self.bass_instrument):
            raise ValueError("the melody instrument must not be shared with another voice")
        # normalize lists coming from JSON
        object.__setattr__(self, "melody_range", tuple(self.melody_range))
        object.__setattr__(self, "accompaniment_range", tuple(self.accompaniment_range))
        object.__setattr__(self, "bass_range", tuple(self.bass_range))
        object.__setattr__(self, "accompaniment_instruments", tuple(self.accompaniment_instruments))
        object.__setattr__(
            self, "progressions",
            tuple(tuple((int(o), str(q)) for o, q in p) for p in self.progressions),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticCorpusConfig":
        return cls(**d)


def _tones_in(root: int, quality: Quality, lo: int, hi: int) -> list[int]:
    classes = {(root + o) % 12 for o in CHORD_TEMPLATES[quality]}
    return [p for p in range(lo, hi + 1) if p % 12 in classes]


def make_piece(rng: np.random.Generator, config: SyntheticCorpusConfig) -> Score:
    key = int(rng.integers(12))
    prog = config.progressions[int(rng.integers(len(config.progressions)))]
    scale = {(key + s) % 12 for s in MAJOR_SCALE}
    m_lo, m_hi = config.melody_range
    scale_tones = [p for p in range(m_lo, m_hi + 1) if p % 12 in scale]
    notes = []
    for beat in range(config.beats):
        offset, label = prog[(beat // config.beats_per_chord) % len(prog)]
        root, quality = (key + offset) % 12, Quality.from_label(label)
        for inst in config.accompaniment_instruments:
            for p in _tones_in(root, quality, *config.accompaniment_range):
                notes.append(NoteEvent(beat, 0, p, 12, inst))
        bass = _tones_in(root, quality, *config.bass_range)
        notes.append(NoteEvent(beat, 0, int(rng.choice(bass)), 12, config.bass_instrument))
        # melody: a chord tone on the beat, optionally followed by a scale tone
        on_beat = int(rng.choice(_tones_in(root, quality, m_lo, m_hi)))
        if rng.random() < 0.5:
            notes.append(NoteEvent(beat, 0, on_beat, 12, config.melody_instrument))
        else:
            notes.append(NoteEvent(beat, 0, on_beat, 6, config.melody_instrument))
            notes.append(NoteEvent(beat, 6, int(rng.choice(scale_tones)), 6, config.melody_instrument))
    return merge_chords(Score.from_events(notes))


def make_synthetic_corpus(config: SyntheticCorpusConfig = SyntheticCorpusConfig()) -> list[Score]:
    """``config.n_pieces`` valid scores, identical for identical configs."""
    rng = np.random.default_rng(config.seed)
    return [make_piece(rng, config) for _ in range(config.n_pieces)]


def planted_melody(score: Score, config: SyntheticCorpusConfig = SyntheticCorpusConfig()) -> Score:
    """The generator's melody voice of a synthetic piece."""
    return Score.from_events(n for n in score.notes if n.instrument == config.melody_instrument)
