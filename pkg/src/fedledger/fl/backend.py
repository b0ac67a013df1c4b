"""Kernel backend selection.

Prefers the compiled extension; falls back to the numpy implementation if
the extension is absent or fails to import. Set FEDLEDGER_PURE_PYTHON=1 to
force the fallback. The choice is made once at import, so a process runs
one backend throughout and stays deterministic.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("FEDLEDGER_PURE_PYTHON") == "1":
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = _kernels_py


def backend_name() -> str:
    return kernels.BACKEND


def get_kernels(pure_python: bool = False):
    """The active kernel module, or explicitly the fallback."""
    return _kernels_py if pure_python else kernels
