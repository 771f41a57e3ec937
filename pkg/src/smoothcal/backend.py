"""Kernel backend selection.

The compiled extension is preferred when it imports cleanly; otherwise the
numpy fallback is used. ``SMOOTHCAL_BACKEND=python`` or ``=compiled`` forces
a choice (forcing ``compiled`` raises if the extension is missing).
"""

from __future__ import annotations

import os

from . import _kernels_py

_FORCE = os.environ.get("SMOOTHCAL_BACKEND", "").strip().lower()

if _FORCE == "python":
    _active = _kernels_py
else:
    try:
        from . import _kernels as _active  # type: ignore[no-redef]
    except ImportError:
        if _FORCE == "compiled":
            raise
        _active = _kernels_py


def active_backend():
    """The kernel module currently in use."""
    return _active


def backend_name() -> str:
    return _active.NAME


def available_backends() -> dict:
    """All importable kernel modules, keyed by name."""
    out = {_kernels_py.NAME: _kernels_py}
    try:
        from . import _kernels

        out[_kernels.NAME] = _kernels
    except ImportError:
        pass
    return out


forward = _active.forward
loss_and_grads = _active.loss_and_grads
