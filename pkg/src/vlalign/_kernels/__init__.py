"""Kernel backend selection.

The hot loops (top-k affinity selection, CSR matvec, CG diffusion) exist
twice: a Cython extension (vlalign._kernels._core) and a numpy fallback.
The compiled one is preferred when importable; RCLP_BACKEND=python forces
the fallback, RCLP_BACKEND=compiled makes a missing extension fatal.
"""

import os

from . import py_backend

_requested = os.environ.get("RCLP_BACKEND", "auto").strip().lower()

if _requested not in ("auto", "compiled", "python", ""):
    raise RuntimeError(f"RCLP_BACKEND must be auto|compiled|python, got {_requested!r}")

if _requested in ("auto", "compiled", ""):
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        _impl = py_backend
        BACKEND = "python"
else:
    _impl = py_backend
    BACKEND = "python"

topk_rows = _impl.topk_rows
csr_matvec = _impl.csr_matvec
cg_diffusion_column = _impl.cg_diffusion_column

__all__ = ["BACKEND", "topk_rows", "csr_matvec", "cg_diffusion_column", "py_backend"]
