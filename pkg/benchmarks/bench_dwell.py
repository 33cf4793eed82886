#!/usr/bin/env python3
"""Benchmark the dwell sweep backends (compiled vs pure Python).

The sweep runs once per displayed entity per session, and again for every
after-the-fact recomputation of an event log under a new DwellConfig, so
it is the one kernel worth compiling.

Usage: python3 benchmarks/bench_dwell.py [--streams 20000] [--events 40]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from feedlab._kernels import available_backends


def make_streams(n_streams: int, n_events: int, seed: int = 7):
    rng = np.random.default_rng(seed)
    streams = []
    for _ in range(n_streams):
        ts = np.cumsum(rng.integers(0, 400, size=n_events)).astype(np.int64)
        on = rng.integers(0, 2, size=n_events).astype(np.uint8)
        fin = np.zeros(n_events, dtype=np.uint8)
        fin[-1] = 1
        streams.append((np.ascontiguousarray(ts), np.ascontiguousarray(on), fin))
    return streams


def bench(sweep, streams, idle_gap: int, cap: int) -> tuple[float, int]:
    start = time.perf_counter()
    acc = 0
    for ts, on, fin in streams:
        acc += sweep(ts, on, fin, idle_gap, cap)
    return time.perf_counter() - start, acc


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--streams", type=int, default=20_000)
    parser.add_argument("--events", type=int, default=40)
    args = parser.parse_args()

    streams = make_streams(args.streams, args.events)
    total_events = args.streams * args.events
    backends = available_backends()
    results = {}
    for name, sweep in backends.items():
        bench(sweep, streams[:200], 60_000, 120_000)  # warm up
        elapsed, checksum = bench(sweep, streams, 60_000, 120_000)
        results[name] = (elapsed, checksum)
        print(
            f"{name:>8}: {elapsed:.3f}s for {args.streams} streams "
            f"({total_events / elapsed / 1e6:.2f} M events/s, checksum {checksum})"
        )
    if len(results) == 2:
        py_t = results["python"][0]
        cy_t = results["cython"][0]
        assert results["python"][1] == results["cython"][1], "backends disagree"
        print(f"speedup: {py_t / cy_t:.1f}x (identical checksums)")
    else:
        print("compiled backend not built; run `python3 setup.py build_ext --inplace`")


if __name__ == "__main__":
    main()
