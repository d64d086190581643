"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from lead_ae import _kernels
from lead_ae._kernels import _fallback


def mute_case(rng, n_notes=400, span=2000):
    def spans():
        start = rng.integers(0, span, n_notes)
        return start, start + rng.integers(3, 48, n_notes), rng.integers(30, 100, n_notes)

    return (*spans(), *spans())


def topk_case(rng, n_groups=500, max_size=24):
    sizes = rng.integers(1, max_size + 1, n_groups)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    budgets = np.array([rng.integers(1, s + 1) for s in sizes])
    return rng.normal(size=offsets[-1]), offsets, budgets


def bench(fn, repeat: int) -> float:
    """Best-of-``repeat`` seconds per call."""
    number = 3
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--json", help="write the timings here")
    args = parser.parse_args(argv)

    try:
        from lead_ae._kernels import _core
    except ImportError:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1

    rng = np.random.default_rng(args.seed)
    spans = mute_case(rng)
    topk = topk_case(rng)
    cases = {
        "mute_sums": lambda impl: _kernels.mute_sums(*spans, False, impl=impl),
        "mute_sums_pc": lambda impl: _kernels.mute_sums(*spans, True, impl=impl),
        "segment_topk": lambda impl: _kernels.segment_topk(*topk, impl=impl),
    }
    rows = []
    print(f"{'kernel':<14} {'cython ms':>10} {'python ms':>10} {'speedup':>8}")
    for name, call in cases.items():
        fast = call(_core)
        slow = call(_fallback)
        same = np.array_equal(fast, slow) if isinstance(fast, np.ndarray) else np.allclose(fast, slow)
        if not same:
            raise SystemExit(f"{name}: backends disagree")
        t_fast = bench(lambda: call(_core), args.repeat)
        t_slow = bench(lambda: call(_fallback), args.repeat)
        rows.append({"kernel": name, "cython_s": t_fast, "python_s": t_slow, "speedup": t_slow / t_fast})
        print(f"{name:<14} {1e3 * t_fast:>10.3f} {1e3 * t_slow:>10.3f} {t_slow / t_fast:>7.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
