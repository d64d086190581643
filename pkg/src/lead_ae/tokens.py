"""Multidimensional event tokens: one row of field indices per event."""

from __future__ import annotations

import numpy as np

from .midi import snap_duration
from .score import (
    DURATION_VOCAB,
    EOS,
    MAX_BEAT,
    N_INSTRUMENTS,
    N_PITCHES,
    RESOLUTION,
    SOS,
    ChordEvent,
    Eos,
    NoteEvent,
    Quality,
    Score,
    ScoreError,
    Sos,
)

FIELDS = ("type", "beat", "position", "pitch", "duration", "instrument", "root", "quality")
TYPE_SOS, TYPE_NOTE, TYPE_CHORD, TYPE_EOS = range(4)

FIELD_SIZES = {
    "type": 4,
    "beat": MAX_BEAT,
    "position": RESOLUTION,
    "pitch": N_PITCHES,
    "duration": len(DURATION_VOCAB),
    "instrument": N_INSTRUMENTS,
    "root": 12,
    "quality": len(Quality),
}

# which fields carry information for each token type
RELEVANT = np.zeros((4, len(FIELDS)), dtype=bool)
RELEVANT[:, 0] = True
RELEVANT[TYPE_NOTE, 1:6] = True
RELEVANT[TYPE_CHORD, [1, 2, 6, 7]] = True

_DUR_INDEX = {d: i for i, d in enumerate(DURATION_VOCAB)}


def null_row() -> list[int]:
    return [FIELD_SIZES[f] for f in FIELDS]


def encode_event(e, instrument: int | None = None) -> list[int]:
    row = null_row()
    if isinstance(e, Sos):
        row[0] = TYPE_SOS
    elif isinstance(e, Eos):
        row[0] = TYPE_EOS
    elif isinstance(e, NoteEvent):
        row[0:6] = [
            TYPE_NOTE,
            e.beat,
            e.position,
            e.pitch,
            _DUR_INDEX[snap_duration(e.duration)],
            e.instrument if instrument is None else instrument,
        ]
    elif isinstance(e, ChordEvent):
        row[0:3] = [TYPE_CHORD, e.beat, e.position]
        row[6:8] = [e.root, int(e.quality)]
    else:
        raise TypeError(f"cannot tokenize {e!r}")
    return row


def encode(events, instrument: int | None = None) -> np.ndarray:
    """Token matrix of shape (len(events), 8); ``instrument`` overrides note instruments."""
    return np.array([encode_event(e, instrument) for e in events], dtype=np.int64).reshape(-1, len(FIELDS))


def check_tokens(tokens: np.ndarray) -> None:
    for j, f in enumerate(FIELDS):
        col = tokens[:, j]
        bad = np.nonzero((col < 0) | (col > FIELD_SIZES[f]))[0]
        if len(bad):
            raise IndexError(f"field {f!r} at position {int(bad[0])}: index {int(col[bad[0]])} out of range")


def decode_row(row) -> object:
    t = int(row[0])
    if t == TYPE_SOS:
        return SOS
    if t == TYPE_EOS:
        return EOS
    if t == TYPE_NOTE:
        return NoteEvent(int(row[1]), int(row[2]), int(row[3]), DURATION_VOCAB[int(row[4])], int(row[5]))
    if t == TYPE_CHORD:
        return ChordEvent(int(row[1]), int(row[2]), int(row[6]), Quality(int(row[7])))
    raise ScoreError(f"unknown token type {t}")


def decode(tokens: np.ndarray) -> Score:
    """Rebuild a score from generated tokens, dropping sentinels and duplicate chords."""
    body = []
    chord_onsets = set()
    for row in tokens:
        e = decode_row(row)
        if isinstance(e, (Sos, Eos)):
            continue
        if isinstance(e, ChordEvent):
            if e.onset in chord_onsets:
                continue
            chord_onsets.add(e.onset)
        body.append(e)
    return Score.from_events(body)
