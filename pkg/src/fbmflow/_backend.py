"""Select the compiled kernel core when available, else the numpy fallback.

Set FBMFLOW_PURE=1 to force the pure implementation (used by the benchmark
and to reproduce results on machines without a compiler).
"""
from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("FBMFLOW_PURE", "0") == "1":
    _impl = _kernels_py
    COMPILED = False
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        COMPILED = True
    except ImportError:
        _impl = _kernels_py
        COMPILED = False

ch_const = _impl.ch_const
kernel_values = _impl.kernel_values
cell_integral_matrix = _impl.cell_integral_matrix

# only the pure module carries the quadrature variants; they are cheap
kernel_values_quad = _kernels_py.kernel_values_quad
cell_integrals = _kernels_py.cell_integrals


def backend_name() -> str:
    return "compiled" if COMPILED else "pure-numpy"
