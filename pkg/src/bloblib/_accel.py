"""Backend selection for the hot kernels.

Kernels are written once as plain loops and compiled with numba when it is
available. Setting ``BLOBLIB_DISABLE_NUMBA=1`` routes every public operation
through the vectorised numpy fallback instead, which is also what runs when
numba cannot be imported.
"""
import os

try:
    import numba
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func
        return decorator


def _flag(name):
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


def use_numba():
    """True when the compiled kernels should be used (checked per call)."""
    return HAVE_NUMBA and not _flag("BLOBLIB_DISABLE_NUMBA")


def backend_name():
    return "numba" if use_numba() else "numpy"


def max_workers():
    """Worker cap from ``BLOBLIB_THREADS`` (default: available CPUs)."""
    raw = os.environ.get("BLOBLIB_THREADS", "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError:
            n = 0
        if n >= 1:
            return n
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity")
               else (os.cpu_count() or 1))
