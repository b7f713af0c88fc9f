"""Optional numba acceleration.

Set ``MAYERSENS_DISABLE_NUMBA=1`` to force the pure-numpy kernels, e.g. when
profiling or on platforms without a working numba install.
"""

import os

_FLAG = "MAYERSENS_DISABLE_NUMBA"

try:
    import numba as _nb
except ImportError:  # pragma: no cover - numba is a declared dependency
    _nb = None


def numba_requested():
    value = os.environ.get(_FLAG, "").strip().lower()
    return value in ("", "0", "false", "no")


HAS_NUMBA = _nb is not None
USE_NUMBA = HAS_NUMBA and numba_requested()


def try_njit(*args, **kwargs):
    """``numba.njit`` when available, identity otherwise.

    Works both as ``@try_njit`` and ``@try_njit(cache=True)``.
    """
    if len(args) == 1 and callable(args[0]) and not kwargs:
        fn = args[0]
        return _nb.njit(cache=True)(fn) if HAS_NUMBA else fn

    def wrap(fn):
        if not HAS_NUMBA:
            return fn
        kw = {"cache": True}
        kw.update(kwargs)
        return _nb.njit(*args, **kw)(fn)

    return wrap
