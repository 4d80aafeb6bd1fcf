"""Select the compiled kernels when importable, else the pure Python ones.

Set ``BVMEM_NO_BINARY=1`` to force the Python fallback.
"""

import os

from . import _core_py

NO_BINARY = os.environ.get("BVMEM_NO_BINARY", "0") in ("1", "true", "True")

if NO_BINARY:
    _impl = _core_py
    COMPILED = False
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        COMPILED = True
    except ImportError:
        _impl = _core_py
        COMPILED = False

mean_recursion = _impl.mean_recursion
eta_quadratic = _impl.eta_quadratic

__all__ = ["COMPILED", "mean_recursion", "eta_quadratic"]
