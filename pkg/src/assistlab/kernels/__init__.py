"""Hot-kernel backend selection: compiled extension if built, else pure Python.

``BACKEND`` reports which implementation won ("compiled" or "python");
``benchmarks/bench_kernels.py`` compares the two on realistic workloads.
Setting ``ASSISTLAB_KERNEL_BACKEND=python`` forces the fallback (useful for
debugging and for exercising the fallback path in CI).
"""

import os

_forced = os.environ.get("ASSISTLAB_KERNEL_BACKEND", "").lower()

if _forced == "python":
    from ._ref import upward_crossings, zc_count

    BACKEND = "python"
else:
    try:
        from ._core import upward_crossings, zc_count

        BACKEND = "compiled"
    except ImportError:  # extension not built on this install
        from ._ref import upward_crossings, zc_count

        BACKEND = "python"

__all__ = ["zc_count", "upward_crossings", "BACKEND"]
