"""Benchmark harness for counterfactual explanation generators on tabular data."""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND  # noqa: E402

__all__ = ["__version__", "KERNEL_BACKEND"]
