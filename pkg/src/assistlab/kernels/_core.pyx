# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the sequential hot kernels (see _ref.py for semantics).

Both detectors are stateful per-sample scans that numpy cannot vectorise;
they dominate feature extraction over cohort-scale recordings, hence the
compiled path.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def zc_count(x, double hysteresis):
    if hysteresis < 0:
        raise ValueError("hysteresis must be >= 0")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] arr = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] v = arr
    cdef Py_ssize_t i, n = v.shape[0]
    cdef double h = hysteresis
    cdef int state = 0
    cdef long count = 0
    for i in range(n):
        if state == 0:
            if v[i] > h:
                state = 1
            elif v[i] < -h:
                state = -1
        elif state == 1:
            if v[i] < -h or (h == 0.0 and v[i] < 0.0):
                state = -1
                count += 1
        else:
            if v[i] > h or (h == 0.0 and v[i] > 0.0):
                state = 1
                count += 1
    return count


def upward_crossings(x, double level, long refractory_n):
    if refractory_n < 0:
        raise ValueError("refractory_n must be >= 0")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] arr = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] v = arr
    cdef Py_ssize_t i, n = v.shape[0]
    cdef long last = -1
    cdef list out = []
    for i in range(1, n):
        if v[i - 1] < level and v[i] >= level:
            if last < 0 or (i - last) > refractory_n:
                out.append(i)
                last = i
    return np.asarray(out, dtype=np.int64)
