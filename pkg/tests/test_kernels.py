import numpy as np
import pytest

from lead_ae import _kernels
from lead_ae._kernels import _fallback

compiled = pytest.importorskip("lead_ae._kernels._core")


def random_spans(rng, n):
    start = rng.integers(0, 200, n)
    end = start + rng.integers(1, 40, n)
    pitch = rng.integers(0, 128, n)
    return start, end, pitch


def test_backend_reported():
    assert _kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("pitch_class", [False, True])
def test_mute_sums_backends_agree(pitch_class):
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = random_spans(rng, int(rng.integers(0, 30)))
        b = random_spans(rng, int(rng.integers(0, 30)))
        fast = _kernels.mute_sums(*a, *b, pitch_class, impl=compiled)
        slow = _kernels.mute_sums(*a, *b, pitch_class, impl=_fallback)
        assert fast[1] == slow[1]
        assert fast[0] == pytest.approx(slow[0], abs=1e-9)


def test_segment_topk_backends_agree():
    rng = np.random.default_rng(1)
    for _ in range(200):
        sizes = rng.integers(1, 9, int(rng.integers(1, 12)))
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        budgets = np.array([rng.integers(0, s + 1) for s in sizes])
        keys = np.round(rng.normal(size=offsets[-1]), 1)  # rounded to create ties
        fast = _kernels.segment_topk(keys, offsets, budgets, impl=compiled)
        slow = _kernels.segment_topk(keys, offsets, budgets, impl=_fallback)
        assert np.array_equal(fast, slow)
        for g, b in enumerate(budgets):
            assert fast[offsets[g]:offsets[g + 1]].sum() == b


def test_segment_topk_ties_go_to_lower_index():
    out = _kernels.segment_topk(np.array([1.0, 1.0, 1.0]), np.array([0, 3]), np.array([2]))
    assert out.tolist() == [True, True, False]


def test_mute_sums_empty_inputs():
    empty = (np.zeros(0), np.zeros(0), np.zeros(0))
    for impl in (compiled, _fallback):
        assert _kernels.mute_sums(*empty, *empty, False, impl=impl) == (0.0, 0)


def test_environment_forces_fallback():
    import os
    import subprocess
    import sys

    code = "from lead_ae import _kernels; print(_kernels.BACKEND)"
    env = {**os.environ, "LEADAE_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
