"""Selects the kernel backend at import time.

The compiled extension is preferred; ``RFPKIT_PURE_PYTHON=1`` forces the
NumPy/pure-Python fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

python_kernels = _pykernels

try:
    from . import _ckernels as compiled_kernels
except ImportError:  # extension not built
    compiled_kernels = None

if compiled_kernels is not None and os.environ.get("RFPKIT_PURE_PYTHON", "") not in ("1", "true"):
    kernels = compiled_kernels
    BACKEND = "cython"
else:
    kernels = _pykernels
    BACKEND = "python"
