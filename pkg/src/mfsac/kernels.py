"""
Backend selection for the hot loops.

The compiled extension is used when it imports; setting the environment
variable ``MFSAC_FORCE_PYTHON=1`` forces the numpy fallback.
"""
from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("MFSAC_FORCE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels

linear_recurrence = _impl.linear_recurrence
advance_block = _impl.advance_block


def get_backend(name: str | None = None):
    """Return the kernel module by name (``"python"`` or ``"cython"``)."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
