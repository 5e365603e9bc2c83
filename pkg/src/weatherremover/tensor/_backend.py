"""Kernel backend selection, done once at import.

Set ``WEATHERREMOVER_PURE_PYTHON=1`` to force the numpy kernels even when the
compiled extension is importable.
"""
import os

from . import _pykernels

python_kernels = _pykernels

if os.environ.get("WEATHERREMOVER_PURE_PYTHON") == "1":
    compiled_kernels = None
else:
    try:
        from . import _ckernels as compiled_kernels
    except ImportError:
        compiled_kernels = None

kernels = compiled_kernels if compiled_kernels is not None else python_kernels
BACKEND = "cython" if compiled_kernels is not None else "python"


def use(name: str) -> None:
    """Switch the active backend at runtime ("cython" or "python")."""
    global kernels, BACKEND
    if name == "cython":
        if compiled_kernels is None:
            raise RuntimeError("compiled kernels are not available in this build")
        kernels, BACKEND = compiled_kernels, "cython"
    elif name == "python":
        kernels, BACKEND = python_kernels, "python"
    else:
        raise ValueError(f"unknown backend {name!r}")
