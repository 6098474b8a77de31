"""Select the compiled kernels when available.

Set ``LOWRANK_SEARCH_BACKEND=python`` to force the pure-Python fallback.
"""
import os

from . import _fallback

kernels = _fallback
if os.environ.get("LOWRANK_SEARCH_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as kernels  # noqa: F811
    except ImportError:
        kernels = _fallback

BACKEND = kernels.BACKEND


def get(name):
    """Return the kernel module for ``name`` in {"cython", "python"}."""
    if name == "python":
        return _fallback
    from . import _kernels
    return _kernels
