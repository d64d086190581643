"""Reconstruction metrics (time-step F1, set Jaccard) and lead-sheet densities."""

from __future__ import annotations

from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .score import RESOLUTION, ChordEvent, LeadSheet, NoteEvent, Score


def _spans(score: Score) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    notes = score.notes
    start = np.array([n.beat * RESOLUTION + n.position for n in notes], dtype=np.int64)
    end = start + np.array([n.duration for n in notes], dtype=np.int64)
    pitch = np.array([n.pitch for n in notes], dtype=np.int64)
    return start, end, pitch


def mute(reference: Score, hypothesis: Score, pitch_class: bool = False) -> float:
    """Mean per-step F1 of sounding pitch sets, in [0, 100].

    Steps are twelfths of a beat; steps where both sides are silent are
    skipped. Two fully silent scores score 100. With ``pitch_class`` the
    distinct pitches of a step are folded into classes with multiplicity.
    """
    total, counted = _kernels.mute_sums(*_spans(reference), *_spans(hypothesis), pitch_class)
    if counted == 0:
        return 100.0
    return 100.0 * total / counted


def onset_triples(score: Score) -> set[tuple[int, int, int]]:
    return {(n.beat, n.position, n.pitch) for n in score.notes}


def jaccard(reference: Score, hypothesis: Score, pitch_class: bool = False) -> float:
    """Jaccard similarity of (beat, position, pitch) note sets, in [0, 100].

    The pitch-class variant folds distinct pitches into their class but keeps
    their count (multiset Jaccard), so folding never lowers the score.
    """
    a = onset_triples(reference)
    b = onset_triples(hypothesis)
    if not a and not b:
        return 100.0
    if not pitch_class:
        return 100.0 * len(a & b) / len(a | b)
    ca = Counter((t[0], t[1], t[2] % 12) for t in a)
    cb = Counter((t[0], t[1], t[2] % 12) for t in b)
    return 100.0 * sum((ca & cb).values()) / sum((ca | cb).values())


def densities(lead: LeadSheet) -> tuple[float, float]:
    """Percentages of source notes and source chords kept by the mask."""
    notes = chords = kept_notes = kept_chords = 0
    for e, m in zip(lead.source.events, lead.mask):
        if isinstance(e, NoteEvent):
            notes += 1
            kept_notes += m
        elif isinstance(e, ChordEvent):
            chords += 1
            kept_chords += m
    note_d = 100.0 * kept_notes / notes if notes else 100.0
    chord_d = 100.0 * kept_chords / chords if chords else 100.0
    return note_d, chord_d


@dataclass(frozen=True)
class MetricsReport:
    mute: float
    pc_mute: float
    jaccard: float
    pc_jaccard: float
    note_density: float | None = None
    chord_density: float | None = None
    pieces: int = 1

    def __post_init__(self) -> None:
        for name in ("mute", "pc_mute", "jaccard", "pc_jaccard", "note_density", "chord_density"):
            v = getattr(self, name)
            if v is not None and not -1e-9 <= v <= 100.0 + 1e-9:
                raise ValueError(f"{name}={v} outside [0, 100]")

    def to_dict(self) -> dict:
        return asdict(self)

    _COLUMNS = (
        ("Note Density", "note_density"),
        ("Chord Density", "chord_density"),
        ("(R) MuTE", "mute"),
        ("(R) PC MuTE", "pc_mute"),
        ("(R) Jac.", "jaccard"),
        ("(R) PC Jac.", "pc_jaccard"),
    )

    @classmethod
    def table(cls, rows: dict[str, "MetricsReport"]) -> str:
        """Aligned plain-text table, one row per named system."""
        header = ["System", *(c for c, _ in cls._COLUMNS)]
        body = []
        for name, rep in rows.items():
            cells = [name]
            for _, attr in cls._COLUMNS:
                v = getattr(rep, attr)
                cells.append("-" if v is None else f"{v:.2f}")
            body.append(cells)
        widths = [max(len(r[j]) for r in [header, *body]) for j in range(len(header))]
        lines = ["  ".join(c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(r, widths)))
                 for r in [header, *body]]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines)


def evaluate_pair(reference: Score, hypothesis: Score, lead: LeadSheet | None = None) -> MetricsReport:
    nd, cd = densities(lead) if lead is not None else (None, None)
    return MetricsReport(
        mute(reference, hypothesis),
        mute(reference, hypothesis, pitch_class=True),
        jaccard(reference, hypothesis),
        jaccard(reference, hypothesis, pitch_class=True),
        nd,
        cd,
    )


def _evaluate_args(args):
    return evaluate_pair(*args)


def evaluate_corpus(references: Sequence[Score], hypotheses: Sequence[Score],
                    leads: Sequence[LeadSheet] | None = None, jobs: int = 1) -> MetricsReport:
    """Per-piece metrics averaged over the corpus.

    Results do not depend on ``jobs``: pieces are scored independently and
    averaged in input order.
    """
    if len(references) != len(hypotheses):
        raise ValueError(f"{len(references)} references but {len(hypotheses)} hypotheses")
    if leads is not None and len(leads) != len(references):
        raise ValueError(f"{len(leads)} lead sheets for {len(references)} references")
    if not references:
        raise ValueError("cannot evaluate an empty corpus")
    args = list(zip(references, hypotheses, leads if leads is not None else [None] * len(references)))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            reports = list(pool.map(_evaluate_args, args))
    else:
        reports = [_evaluate_args(a) for a in args]
    return average(reports)


def average(reports: Sequence[MetricsReport]) -> MetricsReport:
    def mean(attr):
        vals = [getattr(r, attr) for r in reports]
        if any(v is None for v in vals):
            return None
        return float(np.mean(vals))

    return MetricsReport(
        mean("mute"), mean("pc_mute"), mean("jaccard"), mean("pc_jaccard"),
        mean("note_density"), mean("chord_density"), sum(r.pieces for r in reports),
    )
