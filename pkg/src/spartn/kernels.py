"""Backend selection for the ray-marching kernels.

The compiled extension is used when it was built; otherwise the numpy
implementation is used.  Set ``SPARTN_PURE_PYTHON=1`` to force numpy.
"""
from __future__ import annotations

import os

from . import _pykernels

python_backend = _pykernels
compiled_backend = None

if os.environ.get("SPARTN_PURE_PYTHON", "") != "1":
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND_NAME = "compiled" if backend is compiled_backend else "python"


def get_backend(name: str | None = None):
    if name is None:
        return backend
    if name == "python":
        return python_backend
    if name == "compiled":
        if compiled_backend is None:
            raise RuntimeError("compiled kernels are not available")
        return compiled_backend
    raise ValueError(f"unknown backend {name!r}")
