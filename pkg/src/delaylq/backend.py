"""Kernel backend selection: numba-compiled by default, pure numpy on request.

The hot deterministic sweeps in ``_kernels`` are written as plain loops over
numpy arrays so the same source runs either way.  Set the environment variable
``DELAYLQ_BACKEND=numpy`` (or ``DELAYLQ_DISABLE_NUMBA=1``) before import to
skip JIT compilation; the fallback is bit-compatible but slow, and exists for
debugging and for machines without a working numba install.
"""

import os

_DISABLED = (
    os.environ.get("DELAYLQ_BACKEND", "").strip().lower() == "numpy"
    or os.environ.get("DELAYLQ_DISABLE_NUMBA", "") == "1"
)

if not _DISABLED:
    try:
        import numba

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        HAVE_NUMBA = False
else:
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when the compiled backend is active, identity otherwise."""
    if HAVE_NUMBA:
        import numba

        return numba.njit(*args, **kwargs)
    # plain decorator: return the function unchanged
    if args and callable(args[0]):
        return args[0]

    def wrap(func):
        return func

    return wrap


def backend_name() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
