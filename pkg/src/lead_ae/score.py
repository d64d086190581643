"""Symbolic score model: note/chord events, onset grouping and masking."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

RESOLUTION = 12
MAX_BEAT = 256
MAX_EVENTS = 1024
N_INSTRUMENTS = 64
N_PITCHES = 128

DURATION_VOCAB = (
    1, 2, 3, 4, 6, 8, 9, 10, 12, 15, 16, 18, 20, 24,
    30, 36, 40, 48, 60, 72, 84, 96, 120, 144, 168, 192,
)


class ScoreError(ValueError):
    """Raised when a score violates its structural invariants."""


class Quality(enum.IntEnum):
    MAJ = 0
    MIN = 1
    DIM = 2
    AUG = 3
    DOM7 = 4
    MIN7 = 5
    MAJ7 = 6

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "Quality":
        try:
            return cls[label.upper()]
        except KeyError:
            raise ValueError(f"unknown chord quality {label!r}") from None


@dataclass(frozen=True)
class Sos:
    pass


@dataclass(frozen=True)
class Eos:
    pass


SOS = Sos()
EOS = Eos()


@dataclass(frozen=True)
class NoteEvent:
    beat: int
    position: int
    pitch: int
    duration: int
    instrument: int = 0

    @property
    def onset(self) -> tuple[int, int]:
        return (self.beat, self.position)

    @property
    def start(self) -> int:
        return self.beat * RESOLUTION + self.position

    @property
    def end(self) -> int:
        return self.start + self.duration

    def check(self, max_beat: int = MAX_BEAT) -> None:
        if not 0 <= self.beat < max_beat:
            raise ScoreError(f"beat {self.beat} outside [0, {max_beat})")
        if not 0 <= self.position < RESOLUTION:
            raise ScoreError(f"position {self.position} outside [0, {RESOLUTION})")
        if not 0 <= self.pitch < N_PITCHES:
            raise ScoreError(f"pitch {self.pitch} outside [0, {N_PITCHES})")
        if not 1 <= self.duration <= DURATION_VOCAB[-1]:
            raise ScoreError(f"duration {self.duration} outside [1, {DURATION_VOCAB[-1]}]")
        if not 0 <= self.instrument < N_INSTRUMENTS:
            raise ScoreError(f"instrument {self.instrument} outside [0, {N_INSTRUMENTS})")


@dataclass(frozen=True)
class ChordEvent:
    beat: int
    position: int
    root: int
    quality: Quality

    @property
    def onset(self) -> tuple[int, int]:
        return (self.beat, self.position)

    def check(self, max_beat: int = MAX_BEAT) -> None:
        if not 0 <= self.beat < max_beat:
            raise ScoreError(f"beat {self.beat} outside [0, {max_beat})")
        if not 0 <= self.position < RESOLUTION:
            raise ScoreError(f"position {self.position} outside [0, {RESOLUTION})")
        if not 0 <= self.root < 12:
            raise ScoreError(f"chord root {self.root} outside [0, 12)")
        if not isinstance(self.quality, Quality):
            raise ScoreError(f"chord quality {self.quality!r} is not a Quality")


Event = Union[Sos, NoteEvent, ChordEvent, Eos]


def sort_key(event: NoteEvent | ChordEvent) -> tuple:
    # chords precede notes at a shared onset
    if isinstance(event, ChordEvent):
        return (event.beat, event.position, 0, event.root, int(event.quality), 0)
    return (event.beat, event.position, 1, event.pitch, event.instrument, event.duration)


@dataclass(frozen=True)
class Score:
    """An SOS/EOS-delimited, onset-sorted event sequence at 12 positions per beat."""

    events: tuple[Event, ...]
    resolution: int = RESOLUTION

    def __post_init__(self) -> None:
        object.__setattr__(self, "events", tuple(self.events))

    @classmethod
    def from_events(cls, events: Iterable[NoteEvent | ChordEvent]) -> "Score":
        """Build a score from unsorted notes/chords, adding the sentinels."""
        body = sorted(events, key=sort_key)
        return cls((SOS, *body, EOS))

    def __len__(self) -> int:
        return len(self.events)

    @property
    def body(self) -> tuple[NoteEvent | ChordEvent, ...]:
        return self.events[1:-1]  # type: ignore[return-value]

    @property
    def notes(self) -> list[NoteEvent]:
        return [e for e in self.events if isinstance(e, NoteEvent)]

    @property
    def chords(self) -> list[ChordEvent]:
        return [e for e in self.events if isinstance(e, ChordEvent)]

    def without_chords(self) -> "Score":
        return Score.from_events(self.notes)

    def validate(self, max_beat: int = MAX_BEAT, max_events: int = MAX_EVENTS) -> "Score":
        ev = self.events
        if self.resolution != RESOLUTION:
            raise ScoreError(f"resolution must be {RESOLUTION}, got {self.resolution}")
        if len(ev) < 2 or ev[0] != SOS or ev[-1] != EOS:
            raise ScoreError("score must start with SOS and end with EOS")
        if len(ev) > max_events:
            raise ScoreError(f"score has {len(ev)} events, limit is {max_events}")
        prev = None
        for i, e in enumerate(ev[1:-1], start=1):
            if not isinstance(e, (NoteEvent, ChordEvent)):
                raise ScoreError(f"event {i}: unexpected {type(e).__name__} inside score body")
            e.check(max_beat)
            key = sort_key(e)
            if prev is not None and key < prev:
                raise ScoreError(f"event {i} is out of order")
            prev = key
        return self


@dataclass(frozen=True)
class OnsetGroup:
    onset: tuple[int, int]
    note_indices: tuple[int, ...]
    chord_index: int | None = None

    @property
    def indices(self) -> tuple[int, ...]:
        if self.chord_index is None:
            return self.note_indices
        return (self.chord_index, *self.note_indices)

    @property
    def size(self) -> int:
        return len(self.note_indices) + (self.chord_index is not None)


def group_by_onset(score: Score) -> list[OnsetGroup]:
    """Partition the non-sentinel events of ``score`` by (beat, position)."""
    score.validate()
    groups: list[OnsetGroup] = []
    cur: tuple[int, int] | None = None
    notes: list[int] = []
    chord: int | None = None
    for i, e in enumerate(score.events[1:-1], start=1):
        if e.onset != cur:
            if cur is not None:
                groups.append(OnsetGroup(cur, tuple(notes), chord))
            cur, notes, chord = e.onset, [], None
        if isinstance(e, ChordEvent):
            if chord is not None:
                raise ScoreError(f"two chords share onset {cur}")
            chord = i
        else:
            notes.append(i)
    if cur is not None:
        groups.append(OnsetGroup(cur, tuple(notes), chord))
    return groups


@dataclass(frozen=True)
class LeadSheet:
    """A score together with the selection mask that reduces it."""

    source: Score
    mask: tuple[bool, ...]
    unified_instrument: int = 0
    _events: tuple[Event, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        mask = tuple(bool(m) for m in self.mask)
        object.__setattr__(self, "mask", mask)
        if len(mask) != len(self.source.events):
            raise ScoreError(
                f"mask length {len(mask)} does not match {len(self.source.events)} events"
            )
        if not (mask[0] and mask[-1]):
            raise ScoreError("SOS and EOS must be kept by the mask")
        if not 0 <= self.unified_instrument < N_INSTRUMENTS:
            raise ScoreError(f"unified instrument {self.unified_instrument} out of range")
        kept: set = set()
        for e, m in zip(self.source.events[1:-1], mask[1:-1]):
            if not m:
                continue
            if isinstance(e, NoteEvent):
                e = NoteEvent(e.beat, e.position, e.pitch, e.duration, self.unified_instrument)
            kept.add(e)
        object.__setattr__(self, "_events", (SOS, *sorted(kept, key=sort_key), EOS))

    @property
    def events(self) -> tuple[Event, ...]:
        return self._events

    @property
    def kept_indices(self) -> list[int]:
        return [i for i, m in enumerate(self.mask) if m]

    def to_score(self) -> Score:
        return Score(self._events)


def apply_mask(score: Score, mask: Sequence[bool], unified_instrument: int = 0) -> LeadSheet:
    """Keep the masked-in events of ``score`` as a lead sheet with one instrument."""
    return LeadSheet(score, tuple(mask), unified_instrument)
