"""Numerical backend selection.

Hot kernels exist in two functionally identical flavors: numba-compiled
loops and pure-numpy array code. The active one is chosen once per
process from the ``HJRAS_BACKEND`` environment variable:

    HJRAS_BACKEND=numba   force numba (error if numba is missing)
    HJRAS_BACKEND=numpy   force the pure-numpy fallback
    unset                 numba when importable, numpy otherwise

``benchmarks/bench_backends.py`` compares the two.
"""

import os

try:
    import numba  # noqa: F401

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

_VALID = ("numba", "numpy")
_active: str | None = None


def active_backend() -> str:
    """Return the backend name in force, resolving the env flag once."""
    global _active
    if _active is None:
        choice = os.environ.get("HJRAS_BACKEND", "").strip().lower()
        if choice and choice not in _VALID:
            raise ValueError(
                f"HJRAS_BACKEND={choice!r} not understood; use one of {_VALID}"
            )
        if choice == "numba" and not NUMBA_AVAILABLE:
            raise RuntimeError("HJRAS_BACKEND=numba but numba is not importable")
        if not choice:
            choice = "numba" if NUMBA_AVAILABLE else "numpy"
        _active = choice
    return _active


def use_numba() -> bool:
    return active_backend() == "numba"


def set_backend(name: str) -> None:
    """Override the backend (tests and the benchmark use this)."""
    global _active
    if name not in _VALID:
        raise ValueError(f"backend {name!r} not one of {_VALID}")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba backend requested but numba is not importable")
    _active = name
