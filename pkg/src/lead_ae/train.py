"""Skyline warm start, joint end-to-end training, and held-out evaluation."""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .metrics import densities
from .neural.models import L2SModel, ModelConfig, S2LModel, gate_inputs, l2s_decode, pad_tokens
from .reduction import SelectionBudget, skyline_mask, validate_budget
from .score import MAX_BEAT, ChordEvent, LeadSheet, NoteEvent, Score, apply_mask, group_by_onset
from .tokens import encode
from .topk import GumbelConfig, SelectionLayout, grouped_select

PITCH_SHIFT_TRIES = 13


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    batch_size: int = 10
    max_epochs: int = 1000
    patience: int = 20
    pitch_shift: int = 6
    # largest starting-beat offset; None allows any offset that keeps the piece below max_beat
    beat_shift: int | None = None
    augment: bool = True
    budget: SelectionBudget = field(default_factory=lambda: SelectionBudget.fractional(0.1))
    phase: str = "warmstart"
    lr: float = 1e-3
    # step size for S2L; None uses lr. A smaller value keeps the joint phase near its warm start.
    s2l_lr: float | None = None
    temperature: float = 1.0
    seed: int = 0
    strict: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "split", tuple(float(x) for x in self.split))
        if abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ValueError(f"split ratios {self.split} must be non-negative and sum to 1")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.lr <= 0 or (self.s2l_lr is not None and self.s2l_lr <= 0):
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("batch_size must be >= 1 and max_epochs >= 0")
        if self.phase not in ("warmstart", "joint"):
            raise ValueError(f"phase must be 'warmstart' or 'joint', got {self.phase!r}")
        if not 0 <= self.pitch_shift <= 127:
            raise ValueError(f"pitch_shift out of range: {self.pitch_shift}")
        if isinstance(self.budget, dict):
            object.__setattr__(self, "budget", SelectionBudget.from_dict(self.budget))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["budget"] = self.budget.to_dict()
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# data


def piece_beats(score: Score) -> int:
    """Number of beats spanned by the events' onsets."""
    body = score.body
    return max((e.beat for e in body), default=-1) + 1


def augment(score: Score, seed: int | np.random.Generator, pitch_shift: int = 6,
            beat_shift: int | None = None, max_beat: int = MAX_BEAT) -> Score:
    """Random starting-beat offset and transposition within +-``pitch_shift``.

    A transposition that would push a pitch outside [0, 128) is redrawn up to
    13 times, after which the piece is left untransposed.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    room = max_beat - piece_beats(score)
    if beat_shift is not None:
        room = min(room, beat_shift)
    offset = int(rng.integers(0, room + 1)) if room > 0 else 0
    pitches = [n.pitch for n in score.notes]
    shift = 0
    for _ in range(PITCH_SHIFT_TRIES):
        s = int(rng.integers(-pitch_shift, pitch_shift + 1))
        if not pitches or (min(pitches) + s >= 0 and max(pitches) + s < 128):
            shift = s
            break
    return transpose(score, shift, offset)


def transpose(score: Score, semitones: int, beats: int = 0) -> Score:
    out = []
    for e in score.body:
        if isinstance(e, NoteEvent):
            out.append(NoteEvent(e.beat + beats, e.position, e.pitch + semitones, e.duration, e.instrument))
        else:
            out.append(ChordEvent(e.beat + beats, e.position, (e.root + semitones) % 12, e.quality))
    return Score.from_events(out)


def split_corpus(corpus: Sequence[Score], ratios=(0.8, 0.1, 0.1)) -> tuple[list, list, list]:
    """Contiguous train/val/test split; val and test get the rounded-down shares."""
    n = len(corpus)
    n_val = int(math.floor(ratios[1] * n + 1e-9))
    n_test = int(math.floor(ratios[2] * n + 1e-9))
    n_train = n - n_val - n_test
    corpus = list(corpus)
    return corpus[:n_train], corpus[n_train:n_train + n_val], corpus[n_train + n_val:]


@dataclass
class _Piece:
    score: Score
    layout: SelectionLayout
    skyline: tuple[bool, ...]


def _prepare(corpus: Sequence[Score], budget: SelectionBudget) -> list[_Piece]:
    out = []
    for s in corpus:
        groups = group_by_onset(s)
        out.append(_Piece(s, SelectionLayout.build(groups, budget, len(s)), tuple(skyline_mask(s, budget))))
    return out


# ---------------------------------------------------------------------------
# models and selection


@dataclass
class Models:
    config: ModelConfig
    s2l: S2LModel
    l2s: L2SModel

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "Models":
        torch.manual_seed(seed)
        return cls(config, S2LModel(config), L2SModel(config))

    def clone(self) -> "Models":
        return Models(self.config, copy.deepcopy(self.s2l), copy.deepcopy(self.l2s))

    def parameters(self):
        return [*self.s2l.parameters(), *self.l2s.parameters()]


@torch.no_grad()
def model_reduce(s2l: S2LModel, score: Score, budget: SelectionBudget, unified_instrument: int = 0) -> LeadSheet:
    """Deterministic lead sheet: the exact top-scoring events of every onset."""
    s2l.eval()
    tokens, valid = pad_tokens([encode(score.events)])
    scores = s2l(tokens, valid)[0]
    layout = SelectionLayout.build(group_by_onset(score), budget, len(score))
    mask = grouped_select(scores, layout, mode="infer")
    lead = apply_mask(score, mask.tolist(), unified_instrument)
    if not validate_budget(lead, budget):
        raise TrainingError("model selection violated the budget")
    return lead


Selector = Callable[[Score], LeadSheet]


def skyline_selector(budget: SelectionBudget) -> Selector:
    from .reduction import skyline_reduce

    return lambda score: skyline_reduce(score, budget)


def model_selector(s2l: S2LModel, budget: SelectionBudget) -> Selector:
    return lambda score: model_reduce(s2l, score, budget)


@torch.no_grad()
def evaluate_nll(l2s: L2SModel, corpus: Sequence[Score], selector: Selector, batch_size: int = 10) -> float:
    """Per-token reconstruction NLL of ``corpus`` from the selected lead sheets."""
    l2s.eval()
    total, count = 0.0, 0
    for i in range(0, len(corpus), batch_size):
        chunk = corpus[i:i + batch_size]
        src, src_valid = pad_tokens([encode(selector(s).events) for s in chunk])
        tgt, tgt_valid = pad_tokens([encode(s.events) for s in chunk])
        n = int(tgt_valid[:, 1:].sum())
        total += float(l2s.nll(src, src_valid, tgt, tgt_valid)) * n
        count += n
    return total / max(count, 1)


def reconstruct(l2s: L2SModel, lead: LeadSheet, topk: int = 1, temperature: float = 1.0,
                seed: int = 0, max_len: int | None = None) -> Score:
    return l2s_decode(l2s, lead, topk=topk, temperature=temperature, seed=seed, max_len=max_len)


# ---------------------------------------------------------------------------
# training loops


@dataclass
class TrainResult:
    models: Models
    log: list[dict]
    best_epoch: int
    best_val: float

    def log_lines(self) -> str:
        return "".join(json.dumps(row, sort_keys=True) + "\n" for row in self.log)


def _setup(config: TrainConfig) -> None:
    if config.strict:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def _epoch_batches(n: int, config: TrainConfig, epoch: int) -> list[np.ndarray]:
    order = np.random.default_rng([config.seed, epoch, 1]).permutation(n)
    return [order[i:i + config.batch_size] for i in range(0, n, config.batch_size)]


def _augmented(piece: _Piece, config: TrainConfig, epoch: int, index: int) -> Score:
    if not config.augment:
        return piece.score
    s = augment(piece.score, np.random.default_rng([config.seed, epoch, index, 2]),
                config.pitch_shift, config.beat_shift)
    if len(s) != len(piece.score):
        raise TrainingError("augmentation changed the event count")
    return s


def _check_finite(loss: torch.Tensor, phase: str, epoch: int, batch: int) -> None:
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"{phase}: non-finite loss {loss.item()} at epoch {epoch}, batch {batch}")


def _fit(models: Models, corpus_train: Sequence[Score], corpus_val: Sequence[Score], config: TrainConfig,
         step: Callable, validate: Callable, phase: str, log_hook=None) -> TrainResult:
    """Shared epoch loop with early stopping on the validation loss."""
    if not corpus_train:
        raise TrainingError("empty training corpus")
    _setup(config)
    models = models.clone()
    s2l_lr = config.lr if config.s2l_lr is None else config.s2l_lr
    opt = torch.optim.Adam([{"params": models.s2l.parameters(), "lr": s2l_lr},
                            {"params": models.l2s.parameters()}], lr=config.lr, betas=(0.9, 0.999), eps=1e-8)
    pieces = _prepare(corpus_train, config.budget)
    best, best_epoch, best_state = math.inf, 0, models.clone()
    log = []
    start = time.perf_counter()
    for epoch in range(1, config.max_epochs + 1):
        models.s2l.train()
        models.l2s.train()
        sums = {"nll": 0.0, "tokens": 0, "note_density": [], "chord_density": []}
        for b, batch in enumerate(_epoch_batches(len(pieces), config, epoch)):
            scores = [_augmented(pieces[i], config, epoch, int(i)) for i in batch]
            opt.zero_grad()
            loss, nll_sum, n_tok, leads = step(models, [pieces[i] for i in batch], scores, batch, epoch)
            _check_finite(loss, phase, epoch, b)
            loss.backward()
            opt.step()
            sums["nll"] += nll_sum
            sums["tokens"] += n_tok
            for lead in leads:
                nd, cd = densities(lead)
                sums["note_density"].append(nd)
                sums["chord_density"].append(cd)
        val = validate(models)
        if not math.isfinite(val):
            raise TrainingDiverged(f"{phase}: non-finite validation loss at epoch {epoch}")
        row = {
            "epoch": epoch,
            "train_nll": sums["nll"] / max(sums["tokens"], 1),
            "val_nll": val,
            "note_density": float(np.mean(sums["note_density"])) if sums["note_density"] else None,
            "chord_density": float(np.mean(sums["chord_density"])) if sums["chord_density"] else None,
            "elapsed_s": round(time.perf_counter() - start, 3),
        }
        log.append(row)
        if log_hook is not None:
            log_hook(row)
        if val < best:
            best, best_epoch, best_state = val, epoch, models.clone()
        elif epoch - best_epoch >= config.patience:
            break
    return TrainResult(best_state, log, best_epoch, best)


def _nll_sum(l2s: L2SModel, src, src_valid, tgt, tgt_valid, gate=None, positions=None):
    n = int(tgt_valid[:, 1:].sum())
    loss = l2s.nll(src, src_valid, tgt, tgt_valid, gate, positions)
    return loss, float(loss.detach()) * n, n


def pretrain_warmstart(models: Models, train: Sequence[Score], val: Sequence[Score],
                       config: TrainConfig, log_hook=None) -> TrainResult:
    """Fit S2L to skyline masks (per-event BCE) and L2S to skyline lead sheets.

    The validation loss used for early stopping is the L2S reconstruction
    NLL from skyline lead sheets plus the S2L BCE.
    """
    budget = config.budget
    val_pieces = _prepare(val, budget)

    def step(m: Models, pieces, scores, batch, epoch):
        tok, valid = pad_tokens([encode(s.events) for s in scores])
        leads = [apply_mask(s, p.skyline) for p, s in zip(pieces, scores)]
        bce = _bce(m.s2l, tok, valid, pieces)
        src, src_valid = pad_tokens([encode(lead.events) for lead in leads])
        nll, nll_sum, n = _nll_sum(m.l2s, src, src_valid, tok, valid)
        return nll + bce, nll_sum, n, leads

    def validate(m: Models) -> float:
        if not val_pieces:
            return 0.0
        m.s2l.eval()
        with torch.no_grad():
            tok, valid = pad_tokens([encode(p.score.events) for p in val_pieces])
            bce = float(_bce(m.s2l, tok, valid, val_pieces))
        return evaluate_nll(m.l2s, [p.score for p in val_pieces], skyline_selector(budget), config.batch_size) + bce

    return _fit(models, train, val, config, step, validate, "warmstart", log_hook)


def _bce(s2l: S2LModel, tok, valid, pieces) -> torch.Tensor:
    logits = s2l(tok, valid)
    target = torch.zeros_like(logits)
    weight = torch.zeros_like(logits)
    for b, p in enumerate(pieces):
        target[b, : len(p.skyline)] = torch.tensor(p.skyline, dtype=logits.dtype)
        # only events that actually compete for a slot carry a label
        competing = p.layout.index[p.layout.valid]
        weight[b, competing] = 1.0
    loss = F.binary_cross_entropy_with_logits(logits, target, weight=weight, reduction="sum")
    return loss / weight.sum().clamp(min=1.0)


def train_joint(models: Models, train: Sequence[Score], val: Sequence[Score],
                config: TrainConfig, log_hook=None) -> TrainResult:
    """End-to-end training: sampled top-k lead sheets gate the reconstruction loss."""
    budget = config.budget
    gumbel = GumbelConfig(temperature=config.temperature, seed=config.seed)

    def step(m: Models, pieces, scores, batch, epoch):
        tok, valid = pad_tokens([encode(s.events) for s in scores])
        src, _ = pad_tokens([encode(s.events, 0) for s in scores])
        logits = m.s2l(tok, valid)
        sts, hards, leads = [], [], []
        for b, (p, s) in enumerate(zip(pieces, scores)):
            n = len(s)
            mask = grouped_select(logits[b, :n], p.layout, gumbel, "train", epoch, int(batch[b]))
            lead = apply_mask(s, mask.tolist())
            if not validate_budget(lead, budget):
                raise TrainingError(f"training-time lead sheet violates {budget} at epoch {epoch}")
            leads.append(lead)
            pad = tok.shape[1] - n
            sts.append(F.pad(mask.st, (0, pad)))
            hards.append(F.pad(mask.hard, (0, pad)))
        gate, hard, positions = gate_inputs(torch.stack(sts), torch.stack(hards))
        loss, nll_sum, n_tok = _nll_sum(m.l2s, src, hard, tok, valid, gate, positions)
        return loss, nll_sum, n_tok, leads

    def validate(m: Models) -> float:
        if not val:
            return 0.0
        return evaluate_nll(m.l2s, list(val), model_selector(m.s2l, budget), config.batch_size)

    return _fit(models, train, val, config, step, validate, "joint", log_hook)


def train_l2s_only(models: Models, train: Sequence[Score], val: Sequence[Score],
                   config: TrainConfig, log_hook=None) -> TrainResult:
    """Warm start restricted to L2S: a decoder for fixed skyline lead sheets."""
    budget = config.budget

    def step(m: Models, pieces, scores, batch, epoch):
        tok, valid = pad_tokens([encode(s.events) for s in scores])
        leads = [apply_mask(s, p.skyline) for p, s in zip(pieces, scores)]
        src, src_valid = pad_tokens([encode(lead.events) for lead in leads])
        loss, nll_sum, n = _nll_sum(m.l2s, src, src_valid, tok, valid)
        return loss, nll_sum, n, leads

    def validate(m: Models) -> float:
        if not val:
            return 0.0
        return evaluate_nll(m.l2s, list(val), skyline_selector(budget), config.batch_size)

    return _fit(models, train, val, config, step, validate, "skyline", log_hook)
