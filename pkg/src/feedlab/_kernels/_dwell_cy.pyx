# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled dwell sweep; same contract as dwell_py.dwell_sweep."""

BACKEND = "cython"


def dwell_sweep(long long[::1] ts, unsigned char[::1] on,
                unsigned char[::1] is_finish, long long idle_gap_ms,
                long long cap_ms):
    cdef long long total = 0
    cdef long long prev_ts = 0
    cdef long long span
    cdef bint prev_on = False
    cdef Py_ssize_t i, n = ts.shape[0]
    for i in range(n):
        if prev_on:
            span = ts[i] - prev_ts
            if is_finish[i]:
                total += span
            else:
                total += span if span < idle_gap_ms else idle_gap_ms
        if is_finish[i]:
            prev_on = False
            break
        prev_on = on[i] != 0
        prev_ts = ts[i]
    if total < 0:
        return 0
    return total if total < cap_ms else cap_ms
