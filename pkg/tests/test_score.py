import pytest
from hypothesis import given
from hypothesis import strategies as st

from lead_ae.score import (
    EOS,
    SOS,
    ChordEvent,
    LeadSheet,
    NoteEvent,
    Quality,
    Score,
    ScoreError,
    apply_mask,
    group_by_onset,
    sort_key,
)

from conftest import scores


def test_grouping_two_onsets():
    s = Score.from_events([NoteEvent(0, 0, 60, 12), NoteEvent(0, 0, 64, 12), NoteEvent(1, 6, 62, 6)])
    groups = group_by_onset(s)
    assert [g.onset for g in groups] == [(0, 0), (1, 6)]
    assert [len(g.note_indices) for g in groups] == [2, 1]
    assert all(g.chord_index is None for g in groups)


def test_grouping_empty_score():
    assert group_by_onset(Score((SOS, EOS))) == []


def test_grouping_shared_chord_onset():
    s = Score.from_events([NoteEvent(0, 0, 60, 12), ChordEvent(0, 0, 0, Quality.MAJ)])
    (g,) = group_by_onset(s)
    assert g.chord_index == 1 and g.note_indices == (2,)


def test_grouping_rejects_unsorted_and_duplicate_sentinels():
    a, b = NoteEvent(1, 0, 60, 12), NoteEvent(0, 0, 60, 12)
    with pytest.raises(ScoreError):
        group_by_onset(Score((SOS, a, b, EOS)))
    with pytest.raises(ScoreError):
        group_by_onset(Score((SOS, SOS, b, EOS)))


def test_two_chords_at_one_onset_rejected():
    s = Score.from_events([ChordEvent(0, 0, 0, Quality.MAJ), ChordEvent(0, 0, 2, Quality.MIN)])
    with pytest.raises(ScoreError):
        group_by_onset(s)


def test_sort_order_chord_then_pitch_then_instrument():
    events = [NoteEvent(0, 0, 64, 12, 1), NoteEvent(0, 0, 60, 12, 5), NoteEvent(0, 0, 60, 12, 2),
              ChordEvent(0, 0, 0, Quality.MAJ)]
    s = Score.from_events(events)
    assert isinstance(s.events[1], ChordEvent)
    assert [(e.pitch, e.instrument) for e in s.notes] == [(60, 2), (60, 5), (64, 1)]


@pytest.mark.parametrize("field,value", [("beat", 256), ("position", 12), ("pitch", 128),
                                         ("duration", 0), ("duration", 193), ("instrument", 64)])
def test_note_field_bounds(field, value):
    kw = dict(beat=0, position=0, pitch=60, duration=12, instrument=0)
    kw[field] = value
    with pytest.raises(ScoreError):
        Score.from_events([NoteEvent(**kw)]).validate()


def test_event_count_limit():
    s = Score.from_events([NoteEvent(i % 200, 0, 20 + i // 200, 12) for i in range(1023)])
    with pytest.raises(ScoreError):
        s.validate()


def test_apply_mask_identity(example_score):
    lead = apply_mask(example_score, [True] * len(example_score))
    assert len(lead.events) == len(example_score)
    assert all(e.instrument == 0 for e in lead.to_score().notes)


def test_apply_mask_empty(example_score):
    mask = [False] * len(example_score)
    mask[0] = mask[-1] = True
    assert apply_mask(example_score, mask).events == (SOS, EOS)


def test_apply_mask_keeps_one_note(example_score):
    mask = [True] + [False] * (len(example_score) - 2) + [True]
    mask[3] = True  # pitch 72, instrument 3
    lead = apply_mask(example_score, mask)
    assert lead.events[1:-1] == (NoteEvent(0, 0, 72, 12, 0),)


def test_apply_mask_errors(example_score):
    with pytest.raises(ScoreError):
        apply_mask(example_score, [True] * 3)
    mask = [True] * len(example_score)
    mask[-1] = False
    with pytest.raises(ScoreError):
        apply_mask(example_score, mask)


def test_unified_duplicates_collapse():
    s = Score.from_events([NoteEvent(0, 0, 60, 12, 1), NoteEvent(0, 0, 60, 12, 2)])
    lead = apply_mask(s, [True] * 4)
    assert len(lead.events) == 3


@given(scores())
def test_grouping_partitions_body(score):
    idx = [i for g in group_by_onset(score) for i in g.indices]
    assert sorted(idx) == list(range(1, len(score) - 1))
    onsets = [g.onset for g in group_by_onset(score)]
    assert onsets == sorted(set(onsets))


@given(scores(), st.data())
def test_mask_membership_round_trip(score, data):
    mask = [True] + [data.draw(st.booleans()) for _ in range(len(score) - 2)] + [True]
    lead = LeadSheet(score, mask, unified_instrument=7)
    assert list(lead.mask) == mask
    assert lead.kept_indices == [i for i, m in enumerate(mask) if m]
    body = lead.events[1:-1]
    assert [sort_key(e) for e in body] == sorted(sort_key(e) for e in body)
    assert all(e.instrument == 7 for e in body if isinstance(e, NoteEvent))
    lead.to_score().validate()
