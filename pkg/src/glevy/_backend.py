"""Select the compiled kernel when it is importable.

Set ``GLEVY_PURE_PYTHON=1`` to force the NumPy implementation.
"""
import os

from . import _kernels_py

BACKEND = "numpy"
backward_sweep = _kernels_py.backward_sweep

if not os.environ.get("GLEVY_PURE_PYTHON"):
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        backward_sweep = _kernels.backward_sweep
