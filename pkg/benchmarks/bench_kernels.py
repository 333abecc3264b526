#!/usr/bin/env python3
"""Compare the compiled kernel core against the pure-Python fallback.

Workloads mirror the real pipeline: hysteresis zero-crossing counts over
cohort-scale stacks of 250-sample EMG windows, and refractory crossing
detection over full-session kinematic traces.

Run:  python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from assistlab.kernels import BACKEND, _ref

try:
    from assistlab.kernels import _core
except ImportError:
    _core = None


def timeit(fn, *args, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_zc(mod, windows, hyst):
    def run():
        return sum(mod.zc_count(w, h) for w, h in zip(windows, hyst))

    return timeit(lambda: run())


def bench_crossings(mod, traces):
    def run():
        return sum(mod.upward_crossings(tr, float(tr.mean()), 60).size for tr in traces)

    return timeit(lambda: run())


def main():
    rng = np.random.default_rng(0)
    print(f"selected backend at import: {BACKEND}")
    # ~1 cohort-session of EMG windows: 950 windows x 2 channels x 12 subjects
    windows = [rng.standard_normal(250) for _ in range(950 * 2 * 12)]
    hyst = [0.05 * float(np.sqrt(np.mean(w * w))) for w in windows]
    # 12 sessions of 120 s kinematics at 200 Hz
    traces = [np.sin(2 * np.pi * 0.17 * np.arange(24000) / 200.0) + 0.05 * rng.standard_normal(24000)
              for _ in range(12)]

    rows = []
    t_py, n_py = bench_zc(_ref, windows, hyst)
    rows.append(("zc_count (22.8k windows)", "python", t_py, n_py))
    if _core is not None:
        t_cy, n_cy = bench_zc(_core, windows, hyst)
        assert n_cy == n_py, f"backend mismatch: {n_cy} vs {n_py}"
        rows.append(("zc_count (22.8k windows)", "compiled", t_cy, n_cy))
        rows.append(("zc_count speedup", "", t_py / t_cy, ""))

    t_py, n_py = bench_crossings(_ref, traces)
    rows.append(("upward_crossings (12 traces)", "python", t_py, n_py))
    if _core is not None:
        t_cy, n_cy = bench_crossings(_core, traces)
        assert n_cy == n_py, f"backend mismatch: {n_cy} vs {n_py}"
        rows.append(("upward_crossings (12 traces)", "compiled", t_cy, n_cy))
        rows.append(("upward_crossings speedup", "", t_py / t_cy, ""))

    print(f"{'workload':<34}{'backend':<10}{'best (s) / x':>14}  result")
    for name, backend, t, res in rows:
        print(f"{name:<34}{backend:<10}{t:>14.4f}  {res}")


if __name__ == "__main__":
    main()
