"""Backend selection for the compiled kernels.

Set ``DESNET_NUMBA=0`` in the environment to force the pure-numpy path.
The choice is read once at import time; :func:`use_numba` reports it.
"""

import os

_FLAG = os.environ.get("DESNET_NUMBA", "1").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

ENABLED = HAVE_NUMBA and _FLAG not in ("0", "false", "no", "off")


def use_numba():
    return ENABLED


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching, or a no-op when numba is missing."""
    kwargs.setdefault("cache", True)
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)

    def wrap(fn):
        return fn

    if args and callable(args[0]):
        return args[0]
    return wrap
