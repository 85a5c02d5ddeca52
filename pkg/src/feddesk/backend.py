"""Kernel backend selection.

The compiled extension (feddesk._kernels) is preferred when it was built;
otherwise the numpy fallback (feddesk._kernels_py) is used.  Set
FEDDESK_BACKEND=compiled|python to force one.  Both expose the same
functions and agree numerically to roundoff; each is bitwise deterministic
on its own, which is what the reproducibility guarantees rely on.
"""

from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _kernels  # type: ignore[attr-defined]
except ImportError:
    _kernels = None

from .errors import ConfigError


def available_backends() -> dict:
    backends = {"python": _kernels_py}
    if _kernels is not None:
        backends["compiled"] = _kernels
    return backends


def _select():
    forced = os.environ.get("FEDDESK_BACKEND")
    backends = available_backends()
    if forced:
        if forced not in ("compiled", "python"):
            raise ConfigError(f"FEDDESK_BACKEND must be 'compiled' or 'python', got {forced!r}")
        if forced not in backends:
            raise ConfigError("FEDDESK_BACKEND=compiled but the extension is not built")
        return backends[forced]
    return backends.get("compiled", _kernels_py)


_active = _select()


def get_backend():
    """The kernel module every hot-path caller should use."""
    return _active


def backend_name() -> str:
    return _active.NAME
