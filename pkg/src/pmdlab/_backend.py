"""Kernel backend selection.

Set ``PMDLAB_BACKEND=numpy`` to force the pure-numpy kernel implementations,
``PMDLAB_BACKEND=numba`` to require the compiled ones (import error if numba
is missing). Unset or ``auto`` tries numba and quietly falls back.
"""

import os

BACKEND_ENV = "PMDLAB_BACKEND"


def _resolve() -> str:
    choice = os.environ.get(BACKEND_ENV, "auto").strip().lower() or "auto"
    if choice not in {"auto", "numba", "numpy"}:
        raise ValueError(
            "%s must be 'numba', 'numpy' or unset, not %r" % (BACKEND_ENV, choice)
        )
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


BACKEND = _resolve()
USE_NUMBA = BACKEND == "numba"
