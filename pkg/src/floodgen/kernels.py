"""Kernel backend selection.

The compiled extension is used when importable; ``FLOODGEN_KERNELS=python``
forces the numpy fallback.
"""
from __future__ import annotations

import os

from . import _pykernels

python_kernels = _pykernels
try:
    from . import _ckernels as compiled_kernels
except ImportError:  # extension not built
    compiled_kernels = None

if compiled_kernels is not None and os.environ.get("FLOODGEN_KERNELS", "").lower() != "python":
    active = compiled_kernels
    BACKEND = "compiled"
else:
    active = _pykernels
    BACKEND = "python"


def get(name: str | None = None):
    """Return a kernel module: ``"compiled"``, ``"python"`` or the active one."""
    if name is None:
        return active
    if name == "python":
        return _pykernels
    if name == "compiled":
        if compiled_kernels is None:
            raise ImportError("compiled kernels are not built")
        return compiled_kernels
    raise ValueError(f"unknown kernel backend {name!r}")
