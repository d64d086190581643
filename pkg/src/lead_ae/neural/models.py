"""Score2Lead scorer and Lead2Score encoder-decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..score import MAX_BEAT, MAX_EVENTS, LeadSheet, Score
from ..tokens import (
    FIELD_SIZES,
    FIELDS,
    RELEVANT,
    TYPE_CHORD,
    TYPE_EOS,
    TYPE_NOTE,
    TYPE_SOS,
    check_tokens,
    decode,
    encode,
    null_row,
)
from .layers import NEG_INF, DecoderBlock, EncoderBlock


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    d: int = 64
    heads: int = 4
    max_len: int = MAX_EVENTS
    max_beat: int = MAX_BEAT
    vocab: dict = field(default_factory=lambda: dict(FIELD_SIZES))

    def __post_init__(self) -> None:
        if self.d % self.heads:
            raise ValueError(f"d={self.d} must be divisible by heads={self.heads}")
        if self.vocab != FIELD_SIZES:
            raise ValueError(f"vocabulary {self.vocab} does not match the tokenizer {FIELD_SIZES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class FieldEmbedding(nn.Module):
    """Sum of per-field embeddings (each with a null row) plus a learned position table."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.max_len = cfg.max_len
        self.fields = nn.ModuleList(nn.Embedding(FIELD_SIZES[f] + 1, cfg.d) for f in FIELDS)
        self.position = nn.Embedding(cfg.max_len, cfg.d)

    def content(self, tokens: torch.Tensor) -> torch.Tensor:
        return sum(emb(tokens[..., j]) for j, emb in enumerate(self.fields))

    def forward(self, tokens, positions=None, gate=None):
        if tokens.shape[-2] > self.max_len:
            raise ValueError(f"sequence of {tokens.shape[-2]} events exceeds max_len {self.max_len}")
        x = self.content(tokens)
        if gate is not None:
            x = x * gate.unsqueeze(-1)
        if positions is None:
            positions = torch.arange(tokens.shape[-2]).expand(tokens.shape[:-1])
        return x + self.position(positions)


class S2LModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = FieldEmbedding(cfg)
        self.blocks = nn.ModuleList(EncoderBlock(cfg.d, cfg.heads) for _ in range(cfg.layers))
        self.norm = nn.LayerNorm(cfg.d)
        self.head = nn.Linear(cfg.d, 1)

    def forward(self, tokens: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        x = self.embed(tokens)
        for blk in self.blocks:
            x = blk(x, valid)
        return self.head(self.norm(x)).squeeze(-1)


class L2SModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.enc_embed = FieldEmbedding(cfg)
        self.enc_blocks = nn.ModuleList(EncoderBlock(cfg.d, cfg.heads) for _ in range(cfg.layers))
        self.enc_norm = nn.LayerNorm(cfg.d)
        self.dec_embed = FieldEmbedding(cfg)
        self.dec_blocks = nn.ModuleList(DecoderBlock(cfg.d, cfg.heads) for _ in range(cfg.layers))
        self.dec_norm = nn.LayerNorm(cfg.d)
        # one output head per field, in FIELDS order
        self.heads = nn.ModuleList(nn.Linear(cfg.d, FIELD_SIZES[f]) for f in FIELDS)

    def encode(self, tokens, valid, gate=None, positions=None):
        x = self.enc_embed(tokens, positions, gate)
        for blk in self.enc_blocks:
            x = blk(x, valid)
        return self.enc_norm(x)

    def logits(self, memory, memory_valid, dec_tokens, dec_valid) -> dict[str, torch.Tensor]:
        x = self.dec_embed(dec_tokens)
        for blk in self.dec_blocks:
            x = blk(x, dec_valid, memory, memory_valid)
        x = self.dec_norm(x)
        return {f: head(x) for f, head in zip(FIELDS, self.heads)}

    def nll(self, src, src_valid, tgt, tgt_valid, gate=None, src_positions=None) -> torch.Tensor:
        """Mean over target positions of the summed per-field cross-entropy."""
        memory = self.encode(src, src_valid, gate, src_positions)
        logits = self.logits(memory, src_valid, tgt[:, :-1], tgt_valid[:, :-1])
        return field_nll(logits, tgt[:, 1:], tgt_valid[:, 1:])


_RELEVANT = torch.from_numpy(RELEVANT)


def field_nll(logits: dict[str, torch.Tensor], target: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    types = target[..., 0].clamp(max=TYPE_EOS)
    relevant = _RELEVANT[types] & valid.unsqueeze(-1)
    total = 0.0
    for j, f in enumerate(FIELDS):
        y = target[..., j].masked_fill(~relevant[..., j], 0)
        ce = F.cross_entropy(logits[f].flatten(0, -2), y.flatten(), reduction="none").view_as(y)
        total = total + (ce * relevant[..., j]).sum()
    return total / valid.sum().clamp(min=1)


# ---------------------------------------------------------------------------
# batching helpers


def pad_tokens(seqs: list[np.ndarray]) -> tuple[torch.Tensor, torch.Tensor]:
    n = max(len(s) for s in seqs)
    out = np.tile(np.array(null_row(), dtype=np.int64), (len(seqs), n, 1))
    valid = np.zeros((len(seqs), n), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
        valid[i, : len(s)] = True
    return torch.from_numpy(out), torch.from_numpy(valid)


def _as_tokens(x, instrument=None) -> np.ndarray:
    if isinstance(x, LeadSheet):
        return encode(x.events)
    if isinstance(x, Score):
        return encode(x.events, instrument)
    arr = np.asarray(x, dtype=np.int64)
    check_tokens(arr)
    return arr


def embed_sequence(model: S2LModel | L2SModel, tokens) -> torch.Tensor:
    """(len, d) input embedding of one event sequence."""
    emb = model.embed if isinstance(model, S2LModel) else model.enc_embed
    t = torch.from_numpy(_as_tokens(tokens))
    return emb(t.unsqueeze(0))[0]


def s2l_scores(model: S2LModel, score) -> torch.Tensor:
    tokens, valid = pad_tokens([_as_tokens(score)])
    return model(tokens, valid)[0]


def l2s_nll(model: L2SModel, lead, target, mask=None) -> torch.Tensor:
    """Reconstruction NLL of ``target`` given a lead sheet.

    With ``mask`` (a RelaxedMask over ``target``'s events) the encoder reads
    the full target with each event's content embedding scaled by the
    straight-through mask, dropped events hidden, and kept events numbered
    by rank; ``lead`` is then ignored.
    """
    tgt, tgt_valid = pad_tokens([_as_tokens(target)])
    if mask is None:
        src, src_valid = pad_tokens([_as_tokens(lead)])
        return model.nll(src, src_valid, tgt, tgt_valid)
    unified = encode(target.events, 0) if isinstance(target, Score) else _as_tokens(target)
    src, _ = pad_tokens([unified])
    gate, valid, positions = gate_inputs(mask.st.unsqueeze(0), mask.hard.unsqueeze(0))
    return model.nll(src, valid, tgt, tgt_valid, gate, positions)


def gate_inputs(st: torch.Tensor, hard: torch.Tensor):
    positions = (hard.long().cumsum(-1) - 1).clamp(min=0)
    return st, hard, positions


# ---------------------------------------------------------------------------
# decoding


@torch.no_grad()
def l2s_decode(model: L2SModel, lead, topk: int = 10, temperature: float = 1.0,
               seed: int = 0, max_len: int | None = None) -> Score:
    """Sample a score autoregressively with type-order and non-decreasing-beat constraints."""
    model.eval()
    max_len = min(max_len or model.cfg.max_len, model.cfg.max_len)
    src, src_valid = pad_tokens([_as_tokens(lead)])
    memory = model.encode(src, src_valid)
    gen = torch.Generator().manual_seed(seed)
    rows = [null_row()]
    rows[0][0] = TYPE_SOS
    last_beat = 0
    while len(rows) < max_len:
        dec = torch.tensor([rows], dtype=torch.long)
        logits = model.logits(memory, src_valid, dec, torch.ones(1, len(rows), dtype=torch.bool))
        step = {f: logits[f][0, -1].clone() for f in FIELDS}
        step["type"][TYPE_SOS] = NEG_INF
        if len(rows) == max_len - 1:
            step["type"][[TYPE_NOTE, TYPE_CHORD]] = NEG_INF
        step["beat"][:last_beat] = NEG_INF
        row = null_row()
        picked = {f: _sample(step[f], topk, temperature, gen) for f in FIELDS}
        t = picked["type"]
        row[0] = t
        for j, f in enumerate(FIELDS[1:], start=1):
            if RELEVANT[t, j]:
                row[j] = picked[f]
        rows.append(row)
        if t == TYPE_EOS:
            break
        last_beat = row[1]
    return decode(np.array(rows))


def _sample(logits: torch.Tensor, topk: int, temperature: float, gen: torch.Generator) -> int:
    k = min(topk, logits.shape[-1])
    vals, idx = torch.topk(logits, k)
    if k == 1 or temperature <= 0:
        return int(idx[0])
    probs = torch.softmax(vals / temperature, dim=-1)
    return int(idx[torch.multinomial(probs, 1, generator=gen)])
