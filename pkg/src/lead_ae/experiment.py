"""Desk-scale comparison of the learned reducer against the skyline baseline."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .metrics import mute
from .neural.models import ModelConfig
from .reduction import SelectionBudget, skyline_reduce, validate_budget
from .synth import SyntheticCorpusConfig, make_synthetic_corpus, planted_melody
from .train import (
    Models,
    TrainConfig,
    evaluate_nll,
    model_reduce,
    model_selector,
    pretrain_warmstart,
    reconstruct,
    train_joint,
    train_l2s_only,
)


@dataclass(frozen=True)
class TrendConfig:
    n_train: int = 50
    n_val: int = 5
    n_test: int = 5
    layers: int = 2
    d: int = 64
    heads: int = 4
    rho: float = 0.1
    warmstart_epochs: int = 60
    joint_epochs: int = 60
    # the baseline gets the same total number of epochs as warm start + joint
    baseline_epochs: int = 120
    # S2L moves at a smaller step size in the joint phase; at the L2S rate it drifts off the melody
    joint_s2l_lr: float = 3e-5
    patience: int = 20
    batch_size: int = 2
    beat_shift: int | None = 8
    augment: bool = True


@dataclass
class TrendResult:
    seed: int
    warmstart_val_nll: float
    joint_val_nll: float
    baseline_val_nll: float
    lead_ae_mute: float
    baseline_mute: float
    lead_ae_melody_mute: float
    skyline_melody_mute: float
    budget_violations: int
    epochs: dict = field(default_factory=dict)
    elapsed_s: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def run_trend(seed: int, config: TrendConfig = TrendConfig(), log_hook=None) -> TrendResult:
    """Train both systems on one synthetic corpus and score them on its test split."""
    start = time.perf_counter()
    n = config.n_train + config.n_val + config.n_test
    synth = SyntheticCorpusConfig(n_pieces=n, seed=seed)
    corpus = make_synthetic_corpus(synth)
    train = corpus[: config.n_train]
    val = corpus[config.n_train: config.n_train + config.n_val]
    test = corpus[config.n_train + config.n_val:]
    mcfg = ModelConfig(layers=config.layers, d=config.d, heads=config.heads)
    frac = SelectionBudget.fractional(config.rho)
    fixed = SelectionBudget.fixed(1)

    def tcfg(budget, epochs, phase, s2l_lr=None):
        return TrainConfig(
            batch_size=config.batch_size, max_epochs=epochs, patience=config.patience,
            beat_shift=config.beat_shift, augment=config.augment, budget=budget,
            phase=phase, seed=seed, s2l_lr=s2l_lr,
        )

    def hook(tag):
        return None if log_hook is None else (lambda row: log_hook(tag, row))

    init = Models.init(mcfg, seed)
    ws = pretrain_warmstart(init, train, val, tcfg(frac, config.warmstart_epochs, "warmstart"), hook("warmstart"))
    joint_cfg = tcfg(frac, config.joint_epochs, "joint", config.joint_s2l_lr)
    joint = train_joint(ws.models, train, val, joint_cfg, hook("joint"))
    base = train_l2s_only(init, train, val, tcfg(fixed, config.baseline_epochs, "warmstart"), hook("baseline"))

    ws_val = evaluate_nll(ws.models.l2s, val, model_selector(ws.models.s2l, frac))
    joint_val = evaluate_nll(joint.models.l2s, val, model_selector(joint.models.s2l, frac))
    base_val = evaluate_nll(base.models.l2s, val, lambda s: skyline_reduce(s, fixed))

    lae_mute, base_mute, lae_mel, sky_mel, violations = [], [], [], [], 0
    for piece in test:
        cap = len(piece) + 32
        lead = model_reduce(joint.models.s2l, piece, frac)
        violations += not validate_budget(lead, frac)
        lae_mute.append(mute(piece, reconstruct(joint.models.l2s, lead, max_len=cap)))
        sky = skyline_reduce(piece, fixed)
        base_mute.append(mute(piece, reconstruct(base.models.l2s, sky, max_len=cap)))
        melody = planted_melody(piece, synth)
        lae_mel.append(mute(melody, lead.to_score()))
        sky_mel.append(mute(melody, skyline_reduce(piece, frac).to_score()))
    return TrendResult(
        seed, ws_val, joint_val, base_val,
        float(np.mean(lae_mute)), float(np.mean(base_mute)),
        float(np.mean(lae_mel)), float(np.mean(sky_mel)), violations,
        {"warmstart": ws.best_epoch, "joint": joint.best_epoch, "baseline": base.best_epoch},
        round(time.perf_counter() - start, 1),
    )
