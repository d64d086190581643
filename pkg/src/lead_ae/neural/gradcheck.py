"""Central finite-difference checks of autograd gradients at 64-bit precision."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .layers import MultiHeadAttention, attention
from .models import FieldEmbedding, L2SModel, ModelConfig, S2LModel, gate_inputs, pad_tokens


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = 1e-4) -> float:
    # the floor keeps identically-zero gradients (e.g. key biases) from comparing rounding noise
    denom = max(float(analytic.norm()), float(numeric.norm()), floor)
    return float((analytic - numeric).norm()) / denom


def numeric_grad(fn: Callable[[], torch.Tensor], t: torch.Tensor, eps: float = 1e-5,
                 coords: Sequence[int] | None = None) -> torch.Tensor:
    """Central differences of ``fn`` w.r.t. the flat ``coords`` of ``t`` (all by default)."""
    grad = torch.zeros_like(t)
    flat, gflat = t.data.view(-1), grad.view(-1)
    for i in range(flat.numel()) if coords is None else coords:
        old = float(flat[i])
        flat[i] = old + eps
        up = float(fn())
        flat[i] = old - eps
        down = float(fn())
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return grad


def probe_coords(analytic: torch.Tensor, n_zero: int = 16, seed: int = 0) -> list[int]:
    """Every coordinate with a nonzero analytic gradient plus a sample of the zero ones.

    Unused embedding rows dominate parameter counts; sampling them keeps the
    check fast while still testing that their gradient really is zero.
    """
    flat = analytic.reshape(-1)
    nz = torch.nonzero(flat).flatten().tolist()
    zero = torch.nonzero(flat == 0).flatten()
    if len(zero):
        g = torch.Generator().manual_seed(seed)
        zero = zero[torch.randperm(len(zero), generator=g)[:n_zero]]
    return sorted(nz + zero.tolist())


def compare(fn: Callable[[], torch.Tensor], t: torch.Tensor, analytic: torch.Tensor,
            eps: float = 1e-5) -> float:
    coords = probe_coords(analytic)
    numeric = numeric_grad(fn, t, eps, coords)
    idx = torch.tensor(coords, dtype=torch.long)
    return relative_error(analytic.reshape(-1)[idx], numeric.reshape(-1)[idx])


def check(fn: Callable[[], torch.Tensor], tensors: Sequence[torch.Tensor], eps: float = 1e-5) -> float:
    """Largest relative error between autograd and central differences over ``tensors``."""
    for t in tensors:
        t.grad = None
    fn().backward()
    worst = 0.0
    for t in tensors:
        analytic = t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t)
        with torch.no_grad():
            worst = max(worst, compare(fn, t, analytic, eps))
    return worst


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.error <= self.tol


def _rand(gen, *shape):
    return torch.randn(*shape, generator=gen, dtype=torch.float64, requires_grad=True)


def _random_tokens(rng: np.random.Generator, n: int) -> np.ndarray:
    from ..score import SOS, EOS, ChordEvent, NoteEvent, Quality, Score
    from ..tokens import encode

    body = []
    for i in range(n - 2):
        if rng.random() < 0.25:
            body.append(ChordEvent(i, 0, int(rng.integers(12)), Quality(int(rng.integers(7)))))
        else:
            body.append(NoteEvent(i, int(rng.integers(12)), int(rng.integers(40, 90)), 12,
                                  int(rng.integers(64))))
    return encode(Score((SOS, *sorted(body, key=lambda e: (e.beat, e.position)), EOS)).events)


def small_config() -> ModelConfig:
    return ModelConfig(layers=1, d=8, heads=2, max_len=16)


def primitive_checks(seed: int = 0, tol: float = 1e-4) -> list[CheckResult]:
    gen = torch.Generator().manual_seed(seed)
    out = []

    a, b = _rand(gen, 3, 4), _rand(gen, 4, 5)
    w = torch.randn(3, 5, generator=gen, dtype=torch.float64)
    out.append(CheckResult("matmul", check(lambda: ((a @ b) * w).sum(), [a, b]), tol))

    x = _rand(gen, 4, 6)
    w = torch.randn(4, 6, generator=gen, dtype=torch.float64)
    out.append(CheckResult("softmax", check(lambda: (torch.softmax(x, -1) * w).sum(), [x]), tol))

    ln = torch.nn.LayerNorm(6).double()
    with torch.no_grad():
        ln.weight.normal_(generator=gen)
        ln.bias.normal_(generator=gen)
    out.append(CheckResult(
        "layer_norm", check(lambda: (ln(x) * w).sum(), [x, ln.weight, ln.bias]), tol))

    q, k, v = _rand(gen, 1, 2, 5, 3), _rand(gen, 1, 2, 5, 3), _rand(gen, 1, 2, 5, 3)
    valid = torch.tensor([[True, True, True, False, True]])
    wa = torch.randn(1, 2, 5, 3, generator=gen, dtype=torch.float64)
    out.append(CheckResult(
        "attention", check(lambda: (attention(q, k, v, valid) * wa).sum(), [q, k, v]), tol))
    out.append(CheckResult(
        "causal_attention",
        check(lambda: (attention(q, k, v, None, causal=True) * wa).sum(), [q, k, v]), tol))

    mha = MultiHeadAttention(6, 2).double()
    xm = _rand(gen, 1, 4, 6)
    wm = torch.randn(1, 4, 6, generator=gen, dtype=torch.float64)
    out.append(CheckResult(
        "multi_head_attention",
        check(lambda: (mha(xm) * wm).sum(), [xm, *mha.parameters()]), tol))

    emb = FieldEmbedding(small_config()).double()
    tokens = torch.from_numpy(_random_tokens(np.random.default_rng(seed), 6)).unsqueeze(0)
    we = torch.randn(1, 6, 8, generator=gen, dtype=torch.float64)
    out.append(CheckResult(
        "embedding_gather",
        check(lambda: (emb(tokens) * we).sum(), list(emb.parameters())), tol))

    logits = _rand(gen, 5, 7)
    target = torch.randint(0, 7, (5,), generator=gen)
    out.append(CheckResult(
        "cross_entropy", check(lambda: F.cross_entropy(logits, target), [logits]), tol))
    return out


def model_checks(seed: int = 0, tol: float = 1e-4) -> list[CheckResult]:
    from ..reduction import SelectionBudget
    from ..score import ChordEvent, NoteEvent, Quality, Score, group_by_onset
    from ..tokens import encode
    from ..topk import GumbelConfig, SelectionLayout, grouped_select

    torch.manual_seed(seed)
    cfg = small_config()
    s2l = S2LModel(cfg).double()
    l2s = L2SModel(cfg).double()
    rng = np.random.default_rng(seed)
    out = []

    tok6, valid6 = pad_tokens([_random_tokens(rng, 6)])
    w6 = torch.randn(1, 6, dtype=torch.float64, generator=torch.Generator().manual_seed(seed))
    out.append(CheckResult(
        "s2l_scores", check(lambda: (s2l(tok6, valid6) * w6).sum(), list(s2l.parameters())), tol))

    src, src_valid = pad_tokens([_random_tokens(rng, 4)])
    tgt, tgt_valid = pad_tokens([_random_tokens(rng, 4)])
    out.append(CheckResult(
        "l2s_nll",
        check(lambda: l2s.nll(src, src_valid, tgt, tgt_valid), list(l2s.parameters())), tol))

    # end to end: scores -> straight-through mask -> gated reconstruction loss.
    # The forward value of the mask is piecewise constant, so the reference is
    # the soft path with the hard mask frozen at its current value.
    score = Score.from_events([
        ChordEvent(0, 0, 0, Quality.MAJ),
        NoteEvent(0, 0, 48, 12, 24), NoteEvent(0, 0, 64, 12, 24), NoteEvent(0, 0, 72, 12, 36),
        NoteEvent(1, 0, 55, 12, 24), NoteEvent(1, 0, 76, 12, 36),
    ])
    toks = encode(score.events)
    unified = encode(score.events, 0)
    layout = SelectionLayout.build(group_by_onset(score), SelectionBudget.fractional(0.5), len(score))
    st_tok, st_valid = pad_tokens([toks])
    src_u, _ = pad_tokens([unified])
    gcfg = GumbelConfig(seed=seed)

    def e2e_st():
        m = grouped_select(s2l(st_tok, st_valid)[0], layout, gcfg, "train")
        gate, valid, pos = gate_inputs(m.st.unsqueeze(0), m.hard.unsqueeze(0))
        return l2s.nll(src_u, valid, st_tok, st_valid, gate, pos)

    with torch.no_grad():
        m0 = grouped_select(s2l(st_tok, st_valid)[0], layout, gcfg, "train")
    hard0, soft0 = m0.hard.clone(), m0.soft.detach().clone()

    def e2e_frozen():
        m = grouped_select(s2l(st_tok, st_valid)[0], layout, gcfg, "train")
        gate = hard0.double() + m.soft - soft0
        gate, valid, pos = gate_inputs(gate.unsqueeze(0), hard0.unsqueeze(0))
        return l2s.nll(src_u, valid, st_tok, st_valid, gate, pos)

    params = list(s2l.parameters()) + list(l2s.parameters())
    for p in params:
        p.grad = None
    e2e_st().backward()
    analytic = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]
    worst = 0.0
    with torch.no_grad():
        for p, a in zip(params, analytic):
            worst = max(worst, compare(e2e_frozen, p, a))
    out.append(CheckResult("end_to_end_straight_through", worst, tol))
    return out


def run_all(seed: int = 0, tol: float = 1e-4) -> list[CheckResult]:
    return primitive_checks(seed, tol) + model_checks(seed, tol)
