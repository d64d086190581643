"""Dense per-beat chord labels from pitch-class template matching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .midi import CHORD_TEMPLATES
from .score import MAX_BEAT, RESOLUTION, ChordEvent, NoteEvent, Quality, Score


@dataclass(frozen=True)
class ChordConfig:
    out_of_template_penalty: float = 0.5
    min_score: float = 6.0


def chroma_for_beat(score: Score, beat: int) -> np.ndarray:
    """Duration-weighted pitch-class activation (in positions) inside one beat."""
    lo, hi = beat * RESOLUTION, (beat + 1) * RESOLUTION
    chroma = np.zeros(12)
    for n in score.notes:
        overlap = min(n.end, hi) - max(n.start, lo)
        if overlap > 0:
            chroma[n.pitch % 12] += overlap
    return chroma


def _template_matrix() -> np.ndarray:
    # rows ordered root-major, then quality enum order; this order is the tie-break
    rows = []
    for root in range(12):
        for q in Quality:
            t = np.zeros(12)
            t[[(root + o) % 12 for o in CHORD_TEMPLATES[q]]] = 1.0
            rows.append(t)
    return np.array(rows)


_TEMPLATES = _template_matrix()
_SIZES = _TEMPLATES.sum(axis=1)


def chord_scores(chroma: np.ndarray, config: ChordConfig = ChordConfig()) -> np.ndarray:
    """Score of every (root, quality) pair, shape (12, 7)."""
    inside = _TEMPLATES @ chroma
    outside = chroma.sum() - inside
    return (inside - config.out_of_template_penalty * outside).reshape(12, len(Quality))


def best_chord(chroma: np.ndarray, config: ChordConfig = ChordConfig()) -> tuple[int, Quality] | None:
    if not chroma.any():
        return None
    scores = chord_scores(chroma, config).ravel()
    top = scores.max()
    if top < config.min_score:
        return None
    # a triad ties with every seventh chord containing it (missing tones cost
    # nothing), so exact ties go to the smaller template, then the lower root
    tied = np.flatnonzero(scores == top)
    best = min(tied, key=lambda i: (_SIZES[i], i))
    root, q = divmod(int(best), len(Quality))
    return root, Quality(q)


def extract_chords(score: Score, config: ChordConfig = ChordConfig()) -> list[ChordEvent]:
    notes = score.notes
    if not notes:
        return []
    last_beat = min(MAX_BEAT, -(-max(n.end for n in notes) // RESOLUTION))
    chords = []
    for beat in range(last_beat):
        hit = best_chord(chroma_for_beat(score, beat), config)
        if hit is not None:
            chords.append(ChordEvent(beat, 0, hit[0], hit[1]))
    return chords


def merge_chords(score: Score, config: ChordConfig = ChordConfig()) -> Score:
    """Replace any chords in ``score`` with freshly extracted per-beat labels."""
    notes: list[NoteEvent | ChordEvent] = list(score.notes)
    return Score.from_events(notes + extract_chords(score, config)).validate()
