"""Per-onset selection budgets and the skyline baseline reduction."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .score import ChordEvent, LeadSheet, NoteEvent, OnsetGroup, Score, apply_mask, group_by_onset


class ChordPolicy(str, enum.Enum):
    FORCED = "forced"
    COMPETING = "competing"


@dataclass(frozen=True)
class SelectionBudget:
    """Either a fixed ``k`` per onset or a fraction ``rho`` of each onset.

    ``FORCED`` chords are always kept and do not use a slot; ``COMPETING``
    chords are selected jointly with the notes of their onset.
    """

    k: int | None = None
    rho: float | None = None
    chord_policy: ChordPolicy | None = None

    def __post_init__(self) -> None:
        if (self.k is None) == (self.rho is None):
            raise ValueError("exactly one of k or rho must be given")
        if self.k is not None and self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.rho is not None and not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if self.chord_policy is None:
            default = ChordPolicy.FORCED if self.k is not None else ChordPolicy.COMPETING
            object.__setattr__(self, "chord_policy", default)
        else:
            object.__setattr__(self, "chord_policy", ChordPolicy(self.chord_policy))

    @classmethod
    def fixed(cls, k: int, chord_policy: ChordPolicy | str | None = None) -> "SelectionBudget":
        return cls(k=k, chord_policy=chord_policy)

    @classmethod
    def fractional(cls, rho: float, chord_policy: ChordPolicy | str | None = None) -> "SelectionBudget":
        return cls(rho=rho, chord_policy=chord_policy)

    @property
    def forced(self) -> bool:
        return self.chord_policy is ChordPolicy.FORCED

    def to_dict(self) -> dict:
        return {"k": self.k, "rho": self.rho, "chord_policy": self.chord_policy.value}

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionBudget":
        return cls(k=d.get("k"), rho=d.get("rho"), chord_policy=d.get("chord_policy"))

    def __str__(self) -> str:
        amount = f"k={self.k}" if self.k is not None else f"rho={self.rho:g}"
        return f"{amount},{self.chord_policy.value}"


def ceil_fraction(rho: float, n: int) -> int:
    # guard against float noise such as 0.1 * 30 = 3.0000000000000004
    return math.ceil(round(rho * n, 9))


def selectable(group: OnsetGroup, budget: SelectionBudget) -> tuple[int, ...]:
    """Indices of the group's events that compete for slots."""
    if budget.forced:
        return group.note_indices
    return group.indices


def budget_for_group(budget: SelectionBudget, group: OnsetGroup) -> int:
    """Number of selection slots in ``group`` (forced chords excluded)."""
    n = len(selectable(group, budget))
    if budget.k is not None:
        return min(budget.k, n)
    return ceil_fraction(budget.rho, n)


def validate_budget(lead: LeadSheet, budget: SelectionBudget) -> bool:
    mask = lead.mask
    if not (mask[0] and mask[-1]):
        return False
    for g in group_by_onset(lead.source):
        if budget.forced and g.chord_index is not None and not mask[g.chord_index]:
            return False
        kept = sum(mask[i] for i in selectable(g, budget))
        if kept != budget_for_group(budget, g):
            return False
    return True


def _segments(score: Score, groups: list[OnsetGroup], budget: SelectionBudget):
    """Flattened per-group candidates for the segmented top-k kernel."""
    idx: list[int] = []
    offsets = [0]
    budgets = []
    for g in groups:
        idx.extend(selectable(g, budget))
        offsets.append(len(idx))
        budgets.append(budget_for_group(budget, g))
    return np.array(idx, dtype=np.int64), np.array(offsets), np.array(budgets)


def skyline_mask(score: Score, budget: SelectionBudget) -> list[bool]:
    """Keep the highest notes of every onset (ties to the earlier event).

    With competing chords, a chord ranks right behind the top note, so it is
    kept whenever its onset has at least two slots.
    """
    groups = group_by_onset(score)
    idx, offsets, budgets = _segments(score, groups, budget)
    events = score.events
    if budget.forced:
        keys = np.array([events[i].pitch for i in idx], dtype=np.float64)
    else:
        keys = _competing_keys(events, idx, offsets)
    chosen = _kernels.segment_topk(keys, offsets, budgets)
    mask = [False] * len(events)
    mask[0] = mask[-1] = True
    for i, c in zip(idx, chosen):
        mask[i] = bool(c)
    if budget.forced:
        for g in groups:
            if g.chord_index is not None:
                mask[g.chord_index] = True
    return mask


def _competing_keys(events, idx, offsets) -> np.ndarray:
    keys = np.empty(len(idx))
    for lo, hi in zip(offsets[:-1], offsets[1:]):
        notes = sorted(
            (j for j in range(lo, hi) if isinstance(events[idx[j]], NoteEvent)),
            key=lambda j: (-events[idx[j]].pitch, idx[j]),
        )
        order = notes[:1] + [j for j in range(lo, hi) if is_chord(events[idx[j]])] + notes[1:]
        for rank, j in enumerate(order):
            keys[j] = -rank
    return keys


def skyline_reduce(score: Score, budget: SelectionBudget = SelectionBudget.fixed(1),
                   unified_instrument: int = 0) -> LeadSheet:
    return apply_mask(score, skyline_mask(score, budget), unified_instrument)


def is_chord(e) -> bool:
    return isinstance(e, ChordEvent)
