"""Relaxed per-onset top-k selection with Gumbel perturbation and straight-through masks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from . import _kernels
from .reduction import SelectionBudget, budget_for_group, selectable
from .score import OnsetGroup

LOG_CLAMP = 1e-20


@dataclass(frozen=True)
class GumbelConfig:
    temperature: float = 1.0
    noise: str = "sampled"  # or "zero"
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.noise not in ("sampled", "zero"):
            raise ValueError(f"noise must be 'sampled' or 'zero', got {self.noise!r}")


def gumbel_noise(n: int, seed: int, epoch: int = 0, sequence: int = 0) -> np.ndarray:
    """Standard Gumbel draws; entry ``i`` depends only on (seed, epoch, sequence, i)."""
    key = np.random.SeedSequence([seed, epoch, sequence]).generate_state(2, np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    u = gen.random(n)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    return -np.log(-np.log(u))


def batched_soft_topk(keys: torch.Tensor, valid: torch.Tensor, ks: torch.Tensor,
                      temperature: float) -> torch.Tensor:
    """Iterated softmax over rows of ``keys``; row ``g`` runs ``ks[g]`` rounds.

    Every row must have at least one valid entry and ``1 <= ks[g]``.
    """
    keys = keys.masked_fill(~valid, float("-inf"))
    out = torch.zeros_like(keys)
    for r in range(int(ks.max())):
        alpha = torch.softmax(keys / temperature, dim=-1)
        active = (ks > r).to(keys.dtype).unsqueeze(-1)
        out = out + active * alpha
        keys = keys + torch.log(torch.clamp(1.0 - alpha, min=LOG_CLAMP))
    return out


def soft_topk(scores: torch.Tensor, k: int, config: GumbelConfig = GumbelConfig(),
              noise: torch.Tensor | None = None) -> torch.Tensor:
    """Relaxed k-hot vector for ``scores`` (differentiable, sums to ``k``)."""
    scores = torch.as_tensor(scores)
    n = scores.shape[-1]
    if not 1 <= k:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} available items")
    if k == n:
        return torch.ones_like(scores)
    if config.noise == "sampled":
        if noise is None:
            noise = torch.as_tensor(gumbel_noise(n, config.seed), dtype=scores.dtype)
        keys = scores + noise
    else:
        keys = scores
    valid = torch.ones(1, n, dtype=torch.bool)
    return batched_soft_topk(keys.reshape(1, n), valid, torch.tensor([k]), config.temperature)[0]


def hard_topk(soft: torch.Tensor, k: int) -> torch.Tensor:
    """Boolean indicator of the ``k`` largest entries; ties go to the lower index."""
    order = torch.sort(soft.detach(), descending=True, stable=True).indices
    hard = torch.zeros(soft.shape[-1], dtype=torch.bool)
    hard[order[:k]] = True
    return hard


@dataclass
class RelaxedMask:
    soft: torch.Tensor
    hard: torch.Tensor  # bool

    @property
    def st(self) -> torch.Tensor:
        """Hard values forward, gradients of ``soft`` backward."""
        h = self.hard.to(self.soft.dtype)
        return h + self.soft - self.soft.detach()

    def tolist(self) -> list[bool]:
        return [bool(x) for x in self.hard.tolist()]


def straight_through(soft: torch.Tensor, k: int) -> RelaxedMask:
    return RelaxedMask(soft, hard_topk(soft, k))


@dataclass(frozen=True)
class SelectionLayout:
    """Padded per-onset candidate table for one sequence under one budget."""

    length: int
    index: torch.Tensor  # (G, M) long, sequence index of each candidate
    valid: torch.Tensor  # (G, M) bool
    ks: torch.Tensor  # (G,) long, 0 < k < n
    fixed_on: torch.Tensor  # (L,) bool, kept without selection
    offsets: np.ndarray  # flattened segments over all groups (for inference)
    flat_index: np.ndarray
    budgets: np.ndarray

    @classmethod
    def build(cls, groups: Sequence[OnsetGroup], budget: SelectionBudget, length: int) -> "SelectionLayout":
        fixed_on = torch.zeros(length, dtype=torch.bool)
        fixed_on[0] = fixed_on[length - 1] = True
        rows, ks = [], []
        flat, offsets, budgets = [], [0], []
        for g in groups:
            cands = selectable(g, budget)
            b = budget_for_group(budget, g)
            if budget.forced and g.chord_index is not None:
                fixed_on[g.chord_index] = True
            flat.extend(cands)
            offsets.append(len(flat))
            budgets.append(b)
            if b == len(cands):
                fixed_on[list(cands)] = True
            elif b > 0:
                rows.append(cands)
                ks.append(b)
        if any(i < 0 or i >= length for i in flat):
            raise ValueError(f"onset groups reference events outside a length-{length} sequence")
        m = max((len(r) for r in rows), default=1)
        index = torch.zeros(len(rows), m, dtype=torch.long)
        valid = torch.zeros(len(rows), m, dtype=torch.bool)
        for g, r in enumerate(rows):
            index[g, : len(r)] = torch.tensor(r)
            valid[g, : len(r)] = True
        return cls(
            length, index, valid, torch.tensor(ks, dtype=torch.long), fixed_on,
            np.array(offsets, dtype=np.int64), np.array(flat, dtype=np.int64),
            np.array(budgets, dtype=np.int64),
        )


def grouped_select(scores: torch.Tensor, layout: SelectionLayout,
                   config: GumbelConfig = GumbelConfig(), mode: str = "train",
                   epoch: int = 0, sequence: int = 0) -> RelaxedMask:
    """Select the budgeted events of every onset group.

    ``train`` perturbs scores with Gumbel noise keyed on (seed, epoch,
    sequence) and returns a straight-through mask; ``infer`` takes the exact
    top-k by score with no noise.
    """
    if scores.shape[-1] != layout.length:
        raise ValueError(f"{scores.shape[-1]} scores for a length-{layout.length} sequence")
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    base = layout.fixed_on.to(scores.dtype)
    if mode == "train" and config.noise == "sampled":
        noise = torch.as_tensor(
            gumbel_noise(layout.length, config.seed, epoch, sequence), dtype=scores.dtype
        )
        keys = scores + noise
    else:
        keys = scores

    if len(layout.ks):
        soft_rows = batched_soft_topk(keys[layout.index], layout.valid, layout.ks, config.temperature)
        soft = base.index_put((layout.index[layout.valid],), soft_rows[layout.valid])
    else:
        soft = base + 0.0 * scores

    hard = layout.fixed_on.clone()
    if mode == "infer":
        chosen = _kernels.segment_topk(
            scores.detach().cpu().double().numpy()[layout.flat_index], layout.offsets, layout.budgets
        )
        hard[torch.from_numpy(layout.flat_index[chosen])] = True
    elif len(layout.ks):
        rows = soft_rows.detach().masked_fill(~layout.valid, -1.0)
        order = torch.sort(rows, dim=-1, descending=True, stable=True).indices
        take = torch.arange(rows.shape[1]).unsqueeze(0) < layout.ks.unsqueeze(1)
        picked = torch.gather(layout.index, 1, order)[take]
        hard[picked] = True
    return RelaxedMask(soft, hard)
