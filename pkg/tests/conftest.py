import os

import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

from lead_ae.score import ChordEvent, NoteEvent, Quality, Score

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@st.composite
def scores(draw, max_beats=6, max_notes=24, chords=True, max_beat_value=None):
    """Random valid scores with at most one chord per onset."""
    n = draw(st.integers(0, max_notes))
    beat_hi = (max_beat_value or max_beats) - 1
    notes = [
        NoteEvent(
            draw(st.integers(0, beat_hi)),
            draw(st.sampled_from([0, 3, 6, 9])),
            draw(st.integers(30, 100)),
            draw(st.sampled_from([3, 6, 12, 24])),
            draw(st.integers(0, 63)),
        )
        for _ in range(n)
    ]
    notes = list(dict.fromkeys(notes))  # an SMF cannot hold arbitrarily many identical notes
    events = list(notes)
    if chords:
        onsets = sorted({(e.beat, e.position) for e in notes})
        for onset in onsets:
            if draw(st.booleans()):
                events.append(ChordEvent(*onset, draw(st.integers(0, 11)), Quality(draw(st.integers(0, 6)))))
    return Score.from_events(events)


@pytest.fixture
def example_score():
    # onsets of size 3 (chord + 2 notes), 1 and 2
    return Score.from_events([
        ChordEvent(0, 0, 0, Quality.MAJ),
        NoteEvent(0, 0, 60, 12, 0),
        NoteEvent(0, 0, 72, 12, 3),
        NoteEvent(1, 0, 67, 12, 0),
        NoteEvent(2, 6, 55, 6, 5),
        NoteEvent(2, 6, 64, 6, 5),
    ])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
