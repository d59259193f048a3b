"""Hot numerical kernels with a compiled core and a numpy fallback.

The backend is picked once at import time: the Cython extension when it is
importable, numpy otherwise. `QADBENCH_KERNELS=numpy|cython` forces a choice
(forcing `cython` raises if the extension is missing, instead of silently
degrading). All callers go through the module-level names below, so the two
backends stay interchangeable; `tests/test_kernels.py` pins their numerical
equivalence.
"""

from __future__ import annotations

import os

from . import numpy_impl

try:
    from . import _ckernels as cython_impl
except ImportError:
    cython_impl = None

_choice = os.environ.get("QADBENCH_KERNELS", "auto").lower()
if _choice == "numpy":
    _backend = numpy_impl
elif _choice == "cython":
    if cython_impl is None:
        raise ImportError("QADBENCH_KERNELS=cython but the compiled extension is not available")
    _backend = cython_impl
elif _choice == "auto":
    _backend = cython_impl if cython_impl is not None else numpy_impl
else:
    raise ValueError(f"unknown QADBENCH_KERNELS value: {_choice!r}")

backend_name: str = _backend.NAME

conv2d_forward = _backend.conv2d_forward
conv2d_backward_input = _backend.conv2d_backward_input
conv2d_backward_kernels = _backend.conv2d_backward_kernels
maxpool2_forward = _backend.maxpool2_forward
maxpool2_backward = _backend.maxpool2_backward
ry_rows = _backend.ry_rows
cnot_rows = _backend.cnot_rows
z_expectations_rows = _backend.z_expectations_rows

__all__ = [
    "backend_name",
    "numpy_impl",
    "cython_impl",
    "conv2d_forward",
    "conv2d_backward_input",
    "conv2d_backward_kernels",
    "maxpool2_forward",
    "maxpool2_backward",
    "ry_rows",
    "cnot_rows",
    "z_expectations_rows",
]
