"""Kernel selection.

The compiled ``_ckernels`` extension is used when importable; otherwise the
pure-Python ``_pykernels``.  Set ``LPANET_BACKEND=python`` to force the
fallback, or ``LPANET_BACKEND=cython`` to fail loudly when the extension is
missing.
"""

import os

from . import _pykernels

_choice = os.environ.get("LPANET_BACKEND", "").strip().lower()

if _choice not in ("", "python", "cython"):
    raise ImportError(f"LPANET_BACKEND must be 'python' or 'cython', got {_choice!r}")

if _choice == "python":
    kernels = _pykernels
else:
    try:
        from . import _ckernels as kernels
    except ImportError:
        if _choice == "cython":
            raise
        kernels = _pykernels

NAME = "python" if kernels is _pykernels else "cython"


def available():
    """Names of the kernel modules importable in this environment."""
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        pass
    else:
        names.append("cython")
    return names


def get(name):
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
