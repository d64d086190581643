"""Hot loops of metric evaluation and onset-group selection.

The compiled extension is used when it was built; otherwise, or when
``LEADAE_PURE_PYTHON=1`` is set, the pure-Python fallback is imported.
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback

if os.environ.get("LEADAE_PURE_PYTHON") == "1":
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"


def _i64(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.int64)


def mute_sums(ref_start, ref_end, ref_pitch, hyp_start, hyp_end, hyp_pitch,
              pitch_class: bool, impl=None) -> tuple[float, int]:
    impl = impl or _impl
    return impl.mute_sums(
        _i64(ref_start), _i64(ref_end), _i64(ref_pitch),
        _i64(hyp_start), _i64(hyp_end), _i64(hyp_pitch), bool(pitch_class),
    )


def segment_topk(keys, offsets, budgets, impl=None) -> np.ndarray:
    impl = impl or _impl
    return impl.segment_topk(
        np.ascontiguousarray(keys, dtype=np.float64), _i64(offsets), _i64(budgets)
    )


__all__ = ["BACKEND", "mute_sums", "segment_topk"]
