# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: per-step pitch-set F1 and segmented top-k selection."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t, uint8_t

cnp.import_array()


cdef extern from *:
    int popcountll "__builtin_popcountll"(unsigned long long) nogil


cdef void _paint(const int64_t[:] start, const int64_t[:] end, const int64_t[:] pitch,
                 uint64_t[:, ::1] grid) noexcept nogil:
    cdef Py_ssize_t i
    cdef int64_t t, p
    for i in range(start.shape[0]):
        p = pitch[i]
        for t in range(start[i], end[i]):
            grid[t, p >> 6] |= (<uint64_t>1) << (p & 63)


cdef uint64_t CLASS_MASK[12][2]
for _c in range(12):
    CLASS_MASK[_c][0] = 0
    CLASS_MASK[_c][1] = 0
    for _p in range(_c, 128, 12):
        CLASS_MASK[_c][_p >> 6] |= (<uint64_t>1) << (_p & 63)


cdef inline int _class_overlap(uint64_t a0, uint64_t a1, uint64_t b0, uint64_t b1) noexcept nogil:
    # sum over pitch classes of min(#distinct A pitches, #distinct B pitches) in that class
    cdef int c, ca, cb, total = 0
    for c in range(12):
        ca = popcountll(a0 & CLASS_MASK[c][0]) + popcountll(a1 & CLASS_MASK[c][1])
        cb = popcountll(b0 & CLASS_MASK[c][0]) + popcountll(b1 & CLASS_MASK[c][1])
        total += ca if ca < cb else cb
    return total


def mute_sums(const int64_t[:] ref_start, const int64_t[:] ref_end, const int64_t[:] ref_pitch,
              const int64_t[:] hyp_start, const int64_t[:] hyp_end, const int64_t[:] hyp_pitch,
              bint pitch_class):
    """Return (sum of per-step F1, number of counted steps).

    Pitch-class mode counts distinct pitches per class (a multiset of classes).
    """
    cdef int64_t n_steps = 0
    cdef Py_ssize_t i
    for i in range(ref_end.shape[0]):
        if ref_end[i] > n_steps:
            n_steps = ref_end[i]
    for i in range(hyp_end.shape[0]):
        if hyp_end[i] > n_steps:
            n_steps = hyp_end[i]
    a_arr = np.zeros((n_steps, 2), dtype=np.uint64)
    b_arr = np.zeros((n_steps, 2), dtype=np.uint64)
    cdef uint64_t[:, ::1] a = a_arr
    cdef uint64_t[:, ::1] b = b_arr
    cdef double total = 0.0
    cdef int64_t counted = 0
    cdef int64_t t
    cdef int na, nb, nab
    with nogil:
        _paint(ref_start, ref_end, ref_pitch, a)
        _paint(hyp_start, hyp_end, hyp_pitch, b)
        for t in range(n_steps):
            na = popcountll(a[t, 0]) + popcountll(a[t, 1])
            nb = popcountll(b[t, 0]) + popcountll(b[t, 1])
            if na == 0 and nb == 0:
                continue
            if pitch_class:
                nab = _class_overlap(a[t, 0], a[t, 1], b[t, 0], b[t, 1])
            else:
                nab = popcountll(a[t, 0] & b[t, 0]) + popcountll(a[t, 1] & b[t, 1])
            total += 2.0 * nab / (na + nb)
            counted += 1
    return total, counted


def segment_topk(const double[:] keys, const int64_t[:] offsets, const int64_t[:] budgets):
    """Mark the ``budgets[g]`` largest keys of each segment; ties go to the lower index."""
    cdef Py_ssize_t n = keys.shape[0]
    out_arr = np.zeros(n, dtype=np.uint8)
    cdef uint8_t[::1] out = out_arr
    cdef Py_ssize_t g, j, lo, hi, best
    cdef int64_t r, b
    with nogil:
        for g in range(budgets.shape[0]):
            lo = offsets[g]
            hi = offsets[g + 1]
            b = budgets[g]
            if b > hi - lo:
                b = hi - lo
            for r in range(b):
                best = -1
                for j in range(lo, hi):
                    if out[j]:
                        continue
                    if best < 0 or keys[j] > keys[best]:
                        best = j
                out[best] = 1
    return out_arr.astype(bool)
