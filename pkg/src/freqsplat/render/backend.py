"""Rasterizer backend selection.

The hot pixel loops exist twice: a numba @njit version and a pure-numpy
fallback. ``FREQSPLAT_BACKEND=numpy`` (or ``numba``) forces a choice;
by default numba is used when it imports cleanly.
"""

import os

_FORCED = None


def force_backend(name):
    """Override backend selection programmatically (None restores default)."""
    global _FORCED
    if name not in (None, "numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    _FORCED = name


def backend_name():
    choice = _FORCED or os.environ.get("FREQSPLAT_BACKEND", "").strip().lower()
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        return "numba"
    if choice:
        raise ValueError(f"unknown FREQSPLAT_BACKEND {choice!r}")
    try:
        import numba  # noqa: F401
        return "numba"
    except ImportError:
        return "numpy"
