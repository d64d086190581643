import itertools

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from lead_ae.neural.gradcheck import check
from lead_ae.reduction import SelectionBudget, budget_for_group, selectable, validate_budget
from lead_ae.score import ChordEvent, NoteEvent, Quality, Score, apply_mask, group_by_onset
from lead_ae.topk import (
    GumbelConfig,
    SelectionLayout,
    grouped_select,
    gumbel_noise,
    hard_topk,
    soft_topk,
    straight_through,
)

ZERO = GumbelConfig(noise="zero")


def test_select_everything():
    assert soft_topk(torch.tensor([0.3, -1.0, 2.0]), 3).tolist() == [1.0, 1.0, 1.0]


def test_k_one_is_softmax():
    out = soft_topk(torch.tensor([2.0, 0.0, 0.0], dtype=torch.float64), 1, ZERO)
    assert out.tolist() == pytest.approx([0.7870, 0.1065, 0.1065], abs=1e-4)


def test_low_temperature_example():
    out = soft_topk(torch.tensor([0.1, 0.9, 0.5], dtype=torch.float64), 2, GumbelConfig(0.01, "zero"))
    assert torch.allclose(out, torch.tensor([0.0, 1.0, 1.0], dtype=torch.float64), atol=1e-3)


def test_argument_errors():
    with pytest.raises(ValueError):
        soft_topk(torch.zeros(2), 3)
    with pytest.raises(ValueError):
        soft_topk(torch.zeros(2), 0)
    with pytest.raises(ValueError):
        GumbelConfig(temperature=0.0)
    with pytest.raises(ValueError):
        GumbelConfig(noise="uniform")


def test_straight_through_examples():
    assert straight_through(torch.tensor([0.9, 0.8, 0.3]), 2).tolist() == [True, True, False]
    assert hard_topk(torch.tensor([0.5, 0.5]), 1).tolist() == [True, False]


def test_straight_through_gradient_is_soft_gradient():
    scores = torch.randn(6, dtype=torch.float64, generator=torch.Generator().manual_seed(3), requires_grad=True)
    v = torch.arange(6, dtype=torch.float64)
    m = straight_through(soft_topk(scores, 3, ZERO), 3)
    (g_st,) = torch.autograd.grad((m.st * v).sum(), scores)
    (g_soft,) = torch.autograd.grad((soft_topk(scores, 3, ZERO) * v).sum(), scores)
    assert torch.equal(g_st, g_soft)
    assert torch.equal(m.st.detach(), m.hard.double())


@given(st.integers(1, 64), st.data(), st.sampled_from([0.1, 1.0, 10.0]))
def test_soft_sum_is_k(n, data, tau):
    k = data.draw(st.integers(1, n))
    seed = data.draw(st.integers(0, 2**16))
    scores = torch.randn(n, dtype=torch.float64, generator=torch.Generator().manual_seed(seed)) * 3
    out = soft_topk(scores, k, GumbelConfig(tau, "sampled", seed))
    assert abs(float(out.sum()) - k) < 1e-5
    assert float(out.min()) >= 0


@given(st.integers(2, 20), st.data(), st.floats(-50, 50))
def test_shift_invariance(n, data, c):
    k = data.draw(st.integers(1, n - 1))
    scores = torch.randn(n, dtype=torch.float64, generator=torch.Generator().manual_seed(n))
    a = soft_topk(scores, k, GumbelConfig(1.0, "sampled", 5))
    b = soft_topk(scores + c, k, GumbelConfig(1.0, "sampled", 5))
    assert torch.allclose(a, b, atol=1e-9)
    assert torch.equal(hard_topk(a, k), hard_topk(b, k))


def test_soft_topk_gradient_matches_finite_differences():
    gen = torch.Generator().manual_seed(0)
    for n, k in [(5, 2), (8, 3), (12, 7)]:
        x = torch.randn(n, dtype=torch.float64, generator=gen, requires_grad=True)
        w = torch.randn(n, dtype=torch.float64, generator=gen)
        noise = torch.as_tensor(gumbel_noise(n, 1))
        err = check(lambda: (soft_topk(x, k, GumbelConfig(), noise) * w).sum(), [x])
        assert err <= 1e-4


def test_noise_is_counter_based():
    a = gumbel_noise(10, seed=3, epoch=2, sequence=5)
    assert np.array_equal(a, gumbel_noise(25, seed=3, epoch=2, sequence=5)[:10])
    assert not np.array_equal(a, gumbel_noise(10, seed=3, epoch=3, sequence=5))
    assert not np.array_equal(a, gumbel_noise(10, seed=3, epoch=2, sequence=6))


def brute_force_select(scores, groups, budget):
    keep = set()
    for g in groups:
        cands = selectable(g, budget)
        b = budget_for_group(budget, g)
        best = max(itertools.combinations(cands, b),
                   key=lambda c: (sum(scores[i] for i in c), [-i for i in c]))
        keep.update(best)
        if budget.forced and g.chord_index is not None:
            keep.add(g.chord_index)
    return keep


def random_group_score(rng):
    events = []
    for beat in range(int(rng.integers(1, 4))):
        n = int(rng.integers(1, 8))
        pitches = rng.choice(np.arange(40, 90), n, replace=False)
        events += [NoteEvent(beat, 0, int(p), 12) for p in pitches]
        if rng.random() < 0.5:
            events.append(ChordEvent(beat, 0, int(rng.integers(12)), Quality.MAJ))
    return Score.from_events(events)


def test_infer_selection_matches_brute_force():
    rng = np.random.default_rng(0)
    for trial in range(200):
        score = random_group_score(rng)
        groups = group_by_onset(score)
        budget = [SelectionBudget.fixed(int(rng.integers(1, 4))), SelectionBudget.fractional(0.3),
                  SelectionBudget.fixed(2, "competing")][trial % 3]
        raw = rng.normal(size=len(score))
        if trial % 2:
            raw = np.round(raw)  # force ties
        mask = grouped_select(torch.tensor(raw), SelectionLayout.build(groups, budget, len(score)), mode="infer")
        expected = brute_force_select(raw, groups, budget) | {0, len(score) - 1}
        assert {i for i, m in enumerate(mask.tolist()) if m} == expected
        assert validate_budget(apply_mask(score, mask.tolist()), budget)


def test_single_note_and_forced_chord():
    s = Score.from_events([NoteEvent(0, 0, 60, 12)])
    m = grouped_select(torch.zeros(3), SelectionLayout.build(group_by_onset(s), SelectionBudget.fixed(1), 3))
    assert m.tolist() == [True] * 3
    s = Score.from_events([ChordEvent(0, 0, 0, Quality.MAJ), NoteEvent(0, 0, 48, 12), NoteEvent(0, 0, 72, 12)])
    layout = SelectionLayout.build(group_by_onset(s), SelectionBudget.fixed(1), len(s))
    m = grouped_select(torch.tensor([0.0, -5.0, 3.0, -1.0, 0.0]), layout, mode="infer")
    assert m.tolist() == [True, True, True, False, True]


def test_length_mismatch_rejected():
    s = Score.from_events([NoteEvent(0, 0, 60, 12)])
    layout = SelectionLayout.build(group_by_onset(s), SelectionBudget.fixed(1), 3)
    with pytest.raises(ValueError):
        grouped_select(torch.zeros(4), layout)


def test_train_mode_respects_budget_and_is_seeded():
    rng = np.random.default_rng(1)
    budget = SelectionBudget.fractional(0.5)
    for _ in range(30):
        score = random_group_score(rng)
        layout = SelectionLayout.build(group_by_onset(score), budget, len(score))
        scores = torch.tensor(rng.normal(size=len(score)))
        a = grouped_select(scores, layout, GumbelConfig(seed=4), "train", epoch=1, sequence=2)
        b = grouped_select(scores, layout, GumbelConfig(seed=4), "train", epoch=1, sequence=2)
        assert a.tolist() == b.tolist() and torch.equal(a.soft, b.soft)
        assert validate_budget(apply_mask(score, a.tolist()), budget)
        # soft mass per competing group equals its budget
        for r in range(len(layout.ks)):
            idx = layout.index[r][layout.valid[r]]
            assert abs(float(a.soft[idx].sum()) - int(layout.ks[r])) < 1e-9


def test_infer_is_permutation_equivariant_within_groups():
    s = Score.from_events([NoteEvent(0, 0, 50 + i, 12) for i in range(6)])
    layout = SelectionLayout.build(group_by_onset(s), SelectionBudget.fixed(2), len(s))
    scores = np.array([0, 0.3, -1.0, 2.0, 0.7, 1.1, -0.2, 0])
    perm = np.array([0, 3, 1, 6, 2, 5, 4, 7])
    a = grouped_select(torch.tensor(scores), layout, mode="infer").hard.numpy()
    b = grouped_select(torch.tensor(scores[perm]), layout, mode="infer").hard.numpy()
    assert np.array_equal(a[perm], b)
