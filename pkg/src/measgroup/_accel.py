"""Switch between numba-compiled kernels and the pure numpy fallback.

Set ``MEASGROUP_NUMBA=0`` before import to force the numpy path.  The numpy
path is also used when numba cannot be imported.
"""
import os

_FLAG = os.environ.get("MEASGROUP_NUMBA", "1").strip().lower()

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("0", "false", "no", "off")


def njit(*args, **kwargs):
    """``numba.njit`` with ``cache=True``; identity decorator without numba."""
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    import numba

    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)
