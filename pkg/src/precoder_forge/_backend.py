"""Selects the compiled kernels when available, else the numpy fallback.

Set ``PRECODER_FORGE_PURE=1`` to force the numpy path.
"""
import os

from . import _npkernels

BACKEND = "numpy"
kernels = _npkernels

if os.environ.get("PRECODER_FORGE_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        kernels = _ckernels
        BACKEND = "cython"


def available():
    """Names of importable backends, compiled first."""
    names = []
    try:
        from . import _ckernels  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    names.append("numpy")
    return names


def get(name):
    if name == "numpy":
        return _npkernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
