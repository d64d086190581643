"""Pure-Python versions of the compiled kernels (same signatures and results)."""

from __future__ import annotations

from collections import Counter

import numpy as np


def _paint(start, end, pitch, n_steps):
    grid = [set() for _ in range(n_steps)]
    for s, e, p in zip(start, end, pitch):
        for t in range(int(s), int(e)):
            grid[t].add(int(p))
    return grid


def _overlap(sa, sb, pitch_class):
    if not pitch_class:
        return len(sa & sb)
    ca = Counter(p % 12 for p in sa)
    cb = Counter(p % 12 for p in sb)
    return sum((ca & cb).values())


def mute_sums(ref_start, ref_end, ref_pitch, hyp_start, hyp_end, hyp_pitch, pitch_class):
    n_steps = int(max([0, *ref_end, *hyp_end]))
    a = _paint(ref_start, ref_end, ref_pitch, n_steps)
    b = _paint(hyp_start, hyp_end, hyp_pitch, n_steps)
    total, counted = 0.0, 0
    for sa, sb in zip(a, b):
        if not sa and not sb:
            continue
        total += 2.0 * _overlap(sa, sb, pitch_class) / (len(sa) + len(sb))
        counted += 1
    return total, counted


def segment_topk(keys, offsets, budgets):
    out = np.zeros(len(keys), dtype=bool)
    for g, b in enumerate(budgets):
        lo, hi = int(offsets[g]), int(offsets[g + 1])
        order = sorted(range(lo, hi), key=lambda j: (-keys[j], j))
        out[order[: int(b)]] = True
    return out
