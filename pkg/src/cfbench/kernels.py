"""Kernel backend selection.

The compiled extension is preferred; the numpy fallback is used when it is
not built or when ``CFBENCH_PURE_PYTHON`` is set to a truthy value.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("CFBENCH_PURE_PYTHON", "").lower() not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"

mlp_input_gradient = _impl.mlp_input_gradient
rank_rows = _impl.rank_rows
best_split = _impl.best_split
TIE_EPS = _kernels_py.TIE_EPS


def backends():
    """Map backend name -> kernel module for every backend importable here."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out
