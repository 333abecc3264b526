"""Pure-Python reference implementations of the sequential hot kernels.

These are the import-time fallback when the compiled extension is not
available. Both backends must stay behaviourally identical; the test suite
runs every kernel test against both.
"""

import numpy as np


def zc_count(x, hysteresis):
    """Count hysteresis-gated zero crossings of a 1-D signal.

    Schmitt-trigger semantics: starting from the side of the first sample
    outside the dead band, a crossing is counted each time the signal
    reaches beyond ``hysteresis`` on the opposite side of zero. Samples
    inside the band [-hysteresis, +hysteresis] never flip the state, so a
    crossing only counts once the excursion since the last counted crossing
    exceeds the hysteresis.
    """
    if hysteresis < 0:
        raise ValueError("hysteresis must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    h = float(hysteresis)
    state = 0
    count = 0
    for v in x:
        if state == 0:
            if v > h:
                state = 1
            elif v < -h:
                state = -1
        elif state == 1:
            if v < -h or (h == 0.0 and v < 0.0):
                state = -1
                count += 1
        else:
            if v > h or (h == 0.0 and v > 0.0):
                state = 1
                count += 1
    return count


def upward_crossings(x, level, refractory_n):
    """Indices where ``x`` crosses ``level`` upward, with refractory gating.

    A crossing happens at index i when x[i-1] < level <= x[i]. Crossings
    closer than ``refractory_n`` samples to the previously accepted one are
    discarded, mirroring event detectors that must not double-count jittery
    passes through the threshold.
    """
    if refractory_n < 0:
        raise ValueError("refractory_n must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    lvl = float(level)
    out = []
    last = None
    for i in range(1, x.shape[0]):
        if x[i - 1] < lvl <= x[i]:
            if last is None or (i - last) > refractory_n:
                out.append(i)
                last = i
    return np.asarray(out, dtype=np.int64)
