"""Kernel selection: compiled extension when built, NumPy fallback otherwise.

`rk4_segment` is the hot inner loop of every simulation; the compiled
version is typically an order of magnitude faster on the bundled grid.
benchmarks/kernel_benchmark.py compares whatever backends are importable.
"""
from __future__ import annotations

try:
    from gridfreq._rk4 import rk4_segment

    BACKEND = "cython"
except ImportError:
    from gridfreq._rk4_py import rk4_segment

    BACKEND = "python"


def available_backends() -> dict:
    """Importable kernel implementations, keyed by backend name."""
    from gridfreq._rk4_py import rk4_segment as py_impl

    impls = {"python": py_impl}
    try:
        from gridfreq._rk4 import rk4_segment as cy_impl

        impls["cython"] = cy_impl
    except ImportError:
        pass
    return impls


__all__ = ["rk4_segment", "BACKEND", "available_backends"]
