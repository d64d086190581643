"""Standard MIDI File reading/writing and the JSON score interchange format."""

from __future__ import annotations

import bisect
import json
import struct
import warnings
from dataclasses import dataclass
from typing import Any

from .score import (
    DURATION_VOCAB,
    MAX_BEAT,
    MAX_EVENTS,
    N_INSTRUMENTS,
    N_PITCHES,
    RESOLUTION,
    ChordEvent,
    LeadSheet,
    NoteEvent,
    Quality,
    Score,
)

PERCUSSION_CHANNEL = 9
WRITE_TPQ = 480
CHORD_BASE_PITCH = 48

CHORD_TEMPLATES: dict[Quality, tuple[int, ...]] = {
    Quality.MAJ: (0, 4, 7),
    Quality.MIN: (0, 3, 7),
    Quality.DIM: (0, 3, 6),
    Quality.AUG: (0, 4, 8),
    Quality.DOM7: (0, 4, 7, 10),
    Quality.MIN7: (0, 3, 7, 10),
    Quality.MAJ7: (0, 4, 7, 11),
}


class MidiParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class MidiWarning(UserWarning):
    pass


class SchemaError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class QuantizationConfig:
    positions_per_beat: int = RESOLUTION
    max_beat: int = MAX_BEAT
    max_events: int = MAX_EVENTS
    duration_vocab: tuple[int, ...] = DURATION_VOCAB

    def __post_init__(self) -> None:
        if self.positions_per_beat != RESOLUTION:
            raise ValueError(f"positions_per_beat is fixed at {RESOLUTION}")
        v = self.duration_vocab
        if not v or list(v) != sorted(v) or v[0] < 1:
            raise ValueError("duration_vocab must be sorted with minimum >= 1")


@dataclass(frozen=True)
class RawMidiEvent:
    tick: int
    kind: str  # note_on | note_off | program | meta | sysex | other
    channel: int
    data: bytes


@dataclass(frozen=True)
class RawMidiTrack:
    events: tuple[RawMidiEvent, ...]
    ticks_per_quarter: int


def round_half_up(num: int, den: int) -> int:
    """Nearest integer to num/den for num >= 0, ties rounding up."""
    return (2 * num + den) // (2 * den)


def snap_duration(positions: int, vocab: tuple[int, ...] = DURATION_VOCAB) -> int:
    if positions <= vocab[0]:
        return vocab[0]
    if positions >= vocab[-1]:
        return vocab[-1]
    i = bisect.bisect_left(vocab, positions)
    lo, hi = vocab[i - 1], vocab[i]
    return lo if positions - lo < hi - positions else hi


# ---------------------------------------------------------------------------
# Reading


class _Reader:
    def __init__(self, data: bytes, start: int, end: int):
        self.data, self.pos, self.end = data, start, end

    def byte(self) -> int:
        if self.pos >= self.end:
            raise MidiParseError("unexpected end of track chunk", self.pos)
        b = self.data[self.pos]
        self.pos += 1
        return b

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise MidiParseError(f"{n}-byte field overruns track chunk", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def varlen(self) -> int:
        value = 0
        for _ in range(4):
            b = self.byte()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise MidiParseError("variable-length quantity longer than 4 bytes", self.pos)


_DATA_LEN = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


def _read_track(data: bytes, start: int, end: int, tpq: int) -> RawMidiTrack:
    r = _Reader(data, start, end)
    tick = 0
    status = None
    events: list[RawMidiEvent] = []
    while r.pos < r.end:
        tick += r.varlen()
        b = r.byte()
        if b == 0xFF:
            mtype = r.byte()
            payload = r.take(r.varlen())
            events.append(RawMidiEvent(tick, "meta", -1, bytes([mtype]) + payload))
            if mtype == 0x2F:
                break
            continue
        if b in (0xF0, 0xF7):
            events.append(RawMidiEvent(tick, "sysex", -1, r.take(r.varlen())))
            continue
        if b & 0x80:
            status = b
            first = r.byte()
        else:
            if status is None:
                raise MidiParseError("running status without a prior status byte", r.pos - 1)
            first = b
        if status >= 0xF0:
            raise MidiParseError(f"unsupported system message 0x{status:02X}", r.pos - 1)
        hi, ch = status & 0xF0, status & 0x0F
        payload = bytes([first]) if _DATA_LEN[hi] == 1 else bytes([first, r.byte()])
        if any(x & 0x80 for x in payload):
            raise MidiParseError("status byte where a data byte was expected", r.pos - 1)
        if hi == 0x90 and payload[1] > 0:
            kind = "note_on"
        elif hi in (0x80, 0x90):
            kind = "note_off"
        elif hi == 0xC0:
            kind = "program"
        else:
            kind = "other"
        events.append(RawMidiEvent(tick, kind, ch, payload))
    return RawMidiTrack(tuple(events), tpq)


def read_tracks(data: bytes) -> list[RawMidiTrack]:
    """Split an SMF into raw tracks with absolute tick times."""
    if len(data) < 14 or data[:4] != b"MThd":
        raise MidiParseError("missing MThd header", 0)
    (hlen,) = struct.unpack(">I", data[4:8])
    if hlen < 6 or 8 + hlen > len(data):
        raise MidiParseError(f"bad header length {hlen}", 4)
    fmt, ntrks, division = struct.unpack(">HHH", data[8:14])
    if fmt not in (0, 1):
        raise MidiParseError(f"unsupported SMF format {fmt}", 8)
    if division & 0x8000:
        raise MidiParseError("SMPTE time division is not supported", 12)
    if division == 0:
        raise MidiParseError("ticks per quarter must be positive", 12)
    pos = 8 + hlen
    tracks = []
    while pos < len(data) and len(tracks) < ntrks:
        if pos + 8 > len(data):
            raise MidiParseError("truncated chunk header", pos)
        ctype = data[pos:pos + 4]
        (clen,) = struct.unpack(">I", data[pos + 4:pos + 8])
        body = pos + 8
        if body + clen > len(data):
            raise MidiParseError(f"chunk length {clen} runs past end of file", pos + 4)
        if ctype == b"MTrk":
            tracks.append(_read_track(data, body, body + clen, division))
        pos = body + clen
    if len(tracks) < ntrks:
        raise MidiParseError(f"header declares {ntrks} tracks, found {len(tracks)}", pos)
    return tracks


def parse_midi(data: bytes, config: QuantizationConfig = QuantizationConfig()) -> Score:
    """Decode an SMF (format 0/1) into a quantized :class:`Score`."""
    tracks = read_tracks(data)
    tpq = tracks[0].ticks_per_quarter if tracks else WRITE_TPQ
    merged = sorted(
        ((ev.tick, t, i, ev) for t, tr in enumerate(tracks) for i, ev in enumerate(tr.events)),
        key=lambda x: x[:3],
    )
    program = [0] * 16
    open_notes: dict[tuple[int, int], list[tuple[int, int]]] = {}
    spans: list[tuple[int, int | None, int, int]] = []  # on, off, pitch, program
    for tick, _, _, ev in merged:
        if ev.kind == "program":
            program[ev.channel] = ev.data[0]
        elif ev.kind == "note_on":
            if ev.channel == PERCUSSION_CHANNEL:
                continue
            open_notes.setdefault((ev.channel, ev.data[0]), []).append((tick, program[ev.channel]))
        elif ev.kind == "note_off":
            stack = open_notes.get((ev.channel, ev.data[0]))
            if stack:
                on, prog = stack.pop(0)
                spans.append((on, tick, ev.data[0], prog))
    dangling = [(k, v) for k, vs in open_notes.items() for v in vs]
    if dangling:
        warnings.warn(
            f"{len(dangling)} note-on event(s) never released; closed at track end",
            MidiWarning,
            stacklevel=2,
        )
        for (_, pitch), (on, prog) in dangling:
            spans.append((on, None, pitch, prog))

    ppb = config.positions_per_beat
    notes = []
    for on, off, pitch, prog in spans:
        start = round_half_up(on * ppb, tpq)
        if off is None:
            dur = config.duration_vocab[0]
        else:
            dur = snap_duration(max(1, round_half_up((off - on) * ppb, tpq)), config.duration_vocab)
        beat, position = divmod(start, ppb)
        if beat >= config.max_beat:
            continue
        notes.append(NoteEvent(beat, position, pitch, dur, prog // 2))
    score = Score.from_events(notes)
    if len(score) > config.max_events:
        score = Score.from_events(score.body[: config.max_events - 2])
    return score.validate(config.max_beat, config.max_events)


# ---------------------------------------------------------------------------
# Writing


def _varlen(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def _chunk(kind: bytes, body: bytes) -> bytes:
    return kind + struct.pack(">I", len(body)) + body


def _encode_track(events: list[tuple[int, bytes]]) -> bytes:
    out = bytearray()
    tick = 0
    for t, msg in events:
        out += _varlen(t - tick) + msg
        tick = t
    end = max(tick, events[-1][0]) if events else 0
    out += _varlen(end - tick) + b"\xff\x2f\x00"
    return _chunk(b"MTrk", bytes(out))


def chord_pitches(chord: ChordEvent) -> list[int]:
    return [CHORD_BASE_PITCH + chord.root + o for o in CHORD_TEMPLATES[chord.quality]]


def _render_chords(score: Score, chord_instrument: int) -> list[NoteEvent]:
    chords = score.chords
    if not chords:
        return []
    last_end = max([n.end for n in score.notes] + [chords[-1].beat * RESOLUTION + RESOLUTION])
    out = []
    for i, c in enumerate(chords):
        start = c.beat * RESOLUTION + c.position
        stop = (
            chords[i + 1].beat * RESOLUTION + chords[i + 1].position
            if i + 1 < len(chords)
            else max(last_end, start + 1)
        )
        for p in chord_pitches(c):
            if p < N_PITCHES:
                # may exceed the duration vocabulary; MIDI has no such limit
                out.append(NoteEvent(c.beat, c.position, p, stop - start, chord_instrument))
    return out


def write_midi(
    score: Score | LeadSheet,
    *,
    render_chords: bool = True,
    chord_instrument: int = 0,
) -> bytes:
    """Encode a score or lead sheet as SMF format 1, one track per instrument class."""
    if isinstance(score, LeadSheet):
        score = score.to_score()
    notes = list(score.notes)
    if render_chords:
        notes += _render_chords(score, chord_instrument)
    scale = WRITE_TPQ // RESOLUTION
    channels = [c for c in range(16) if c != PERCUSSION_CHANNEL]

    # allocate channels so that no two overlapping notes share (channel, pitch)
    busy: dict[tuple[int, int], int] = {}  # (channel, pitch) -> end position
    sticky: dict[int, int] = {}
    assigned = []
    for n in sorted(notes, key=lambda n: (n.start, n.instrument, n.pitch, n.duration)):
        order = [sticky[n.instrument]] if n.instrument in sticky else []
        order += [c for c in channels if c not in order]
        for ch in order:
            if busy.get((ch, n.pitch), -1) <= n.start:
                break
        else:
            raise ValueError(f"more than {len(channels)} overlapping notes of pitch {n.pitch}")
        busy[(ch, n.pitch)] = n.end
        sticky.setdefault(n.instrument, ch)
        assigned.append((n, ch))

    instruments = sorted({n.instrument for n in notes})
    # per track: (tick, order, seq, kind, channel, payload); offs sort before ons
    per_track: dict[int, list] = {i: [] for i in instruments}
    for seq, (n, ch) in enumerate(assigned):
        evs = per_track[n.instrument]
        evs.append((n.start * scale, 2, seq, "on", ch, bytes([0x90 | ch, n.pitch, 80])))
        evs.append((n.end * scale, 0, seq, "off", ch, bytes([0x80 | ch, n.pitch, 0])))
    for evs in per_track.values():
        evs.sort(key=lambda e: e[:3])

    # insert program changes where the merged read order needs them
    merged = sorted(
        ((e[0], t, j, e) for t, i in enumerate(instruments, start=1) for j, e in enumerate(per_track[i])),
        key=lambda x: x[:3],
    )
    current = [-1] * 16
    needs_program: set[tuple[int, int]] = set()
    for _, t, j, e in merged:
        if e[3] == "on":
            prog = 2 * instruments[t - 1]
            if current[e[4]] != prog:
                current[e[4]] = prog
                needs_program.add((t, j))

    tracks = [
        _encode_track([
            (0, b"\xff\x51\x03\x07\xa1\x20"),  # 120 bpm
            (0, b"\xff\x58\x04\x04\x02\x18\x08"),
        ])
    ]
    for t, inst in enumerate(instruments, start=1):
        out: list[tuple[int, bytes]] = []
        for j, e in enumerate(per_track[inst]):
            if (t, j) in needs_program:
                out.append((e[0], bytes([0xC0 | e[4], 2 * inst])))
            out.append((e[0], e[5]))
        tracks.append(_encode_track(out))
    header = _chunk(b"MThd", struct.pack(">HHH", 1, len(tracks), WRITE_TPQ))
    return header + b"".join(tracks)


# ---------------------------------------------------------------------------
# JSON interchange


def _event_to_dict(e) -> dict[str, Any]:
    if isinstance(e, NoteEvent):
        return {
            "type": "note",
            "beat": e.beat,
            "position": e.position,
            "pitch": e.pitch,
            "duration": e.duration,
            "instrument": e.instrument,
        }
    return {
        "type": "chord",
        "beat": e.beat,
        "position": e.position,
        "root": e.root,
        "quality": e.quality.label,
    }


def score_to_dict(score: Score) -> dict[str, Any]:
    return {"resolution": score.resolution, "events": [_event_to_dict(e) for e in score.body]}


def score_to_json(score: Score) -> str:
    return json.dumps(score_to_dict(score), indent=1) + "\n"


def lead_to_json(lead: LeadSheet) -> str:
    obj = score_to_dict(lead.to_score())
    obj["lead_sheet"] = {
        "unified_instrument": lead.unified_instrument,
        "mask": [int(m) for m in lead.mask],
    }
    return json.dumps(obj, indent=1) + "\n"


_INT_FIELDS = {
    "note": (
        ("beat", 0, MAX_BEAT),
        ("position", 0, RESOLUTION),
        ("pitch", 0, N_PITCHES),
        ("duration", 1, DURATION_VOCAB[-1] + 1),
        ("instrument", 0, N_INSTRUMENTS),
    ),
    "chord": (("beat", 0, MAX_BEAT), ("position", 0, RESOLUTION), ("root", 0, 12)),
}


def _get_int(obj: dict, key: str, lo: int, hi: int, path: str) -> int:
    if key not in obj:
        raise SchemaError(path, f"missing key {key!r}")
    v = obj[key]
    if not isinstance(v, int) or isinstance(v, bool):
        raise SchemaError(f"{path}.{key}", f"expected integer, got {v!r}")
    if not lo <= v < hi:
        raise SchemaError(f"{path}.{key}", f"value {v} outside range [{lo}, {hi})")
    return v


def score_from_dict(obj: Any) -> Score:
    if not isinstance(obj, dict):
        raise SchemaError("$", "expected an object")
    if "events" not in obj:
        raise SchemaError("$", "missing key 'events'")
    if obj.get("resolution", RESOLUTION) != RESOLUTION:
        raise SchemaError("$.resolution", f"must be {RESOLUTION}")
    if not isinstance(obj["events"], list):
        raise SchemaError("$.events", "expected a list")
    events = []
    for i, e in enumerate(obj["events"]):
        path = f"$.events[{i}]"
        if not isinstance(e, dict):
            raise SchemaError(path, "expected an object")
        kind = e.get("type")
        if kind not in _INT_FIELDS:
            raise SchemaError(f"{path}.type", f"expected 'note' or 'chord', got {kind!r}")
        vals = [_get_int(e, k, lo, hi, path) for k, lo, hi in _INT_FIELDS[kind]]
        if kind == "note":
            events.append(NoteEvent(*vals))
        else:
            if "quality" not in e:
                raise SchemaError(path, "missing key 'quality'")
            try:
                q = Quality.from_label(e["quality"])
            except (ValueError, AttributeError):
                raise SchemaError(f"{path}.quality", f"unknown quality {e['quality']!r}") from None
            events.append(ChordEvent(*vals, q))
    return Score.from_events(events).validate()


def score_from_json(text: str) -> Score:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from None
    return score_from_dict(obj)


def lead_from_json(text: str, source: Score) -> LeadSheet:
    obj = json.loads(text)
    meta = obj.get("lead_sheet")
    if not isinstance(meta, dict) or "mask" not in meta:
        raise SchemaError("$.lead_sheet", "missing lead sheet mask")
    return LeadSheet(source, tuple(bool(m) for m in meta["mask"]), meta.get("unified_instrument", 0))
