"""Optional numba acceleration.

Kernels are written twice: a numba ``@njit`` loop and a vectorised numpy
path. ``SPIKEDEPTH_NUMBA=0`` in the environment forces the numpy path; so
does a missing numba install.
"""
import os
from warnings import warn

_FLAG = os.environ.get("SPIKEDEPTH_NUMBA", "1").strip().lower()
NUMBA_REQUESTED = _FLAG not in ("0", "false", "no", "off")

try:
    import numba as _nb
except ImportError:  # pragma: no cover - numba is a declared dependency
    _nb = None
    if NUMBA_REQUESTED:
        warn("numba not found, falling back to numpy kernels")

USE_NUMBA = NUMBA_REQUESTED and _nb is not None

if _nb is not None and "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
    # Skip the TBB probe: old TBB builds trigger a warning on every import.
    _nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise.

    The decorated function is compiled lazily even when the numpy path is
    selected, so it stays callable for the benchmark and the parity tests.
    """
    if _nb is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    return _nb.njit(*args, **kwargs)


def set_threads(n: int) -> None:
    if _nb is not None:
        _nb.set_num_threads(max(1, min(n, _nb.config.NUMBA_NUM_THREADS)))
