"""Select the interior-point kernel at import time.

The compiled kernel is preferred. Setting ``FEQRBOOT_BACKEND=python`` forces
the numpy fallback, which is also used when the extension was not built.
"""

from __future__ import annotations

import os

from . import _ipm

try:
    from . import _ipm_ext
except ImportError:  # extension not built
    _ipm_ext = None

KERNELS = {"python": _ipm.solve}
if _ipm_ext is not None:
    KERNELS["compiled"] = _ipm_ext.solve

_requested = os.environ.get("FEQRBOOT_BACKEND", "").strip().lower()
if _requested and _requested not in ("python", "compiled"):
    raise ImportError(f"FEQRBOOT_BACKEND must be 'python' or 'compiled', got {_requested!r}")
if _requested == "compiled" and _ipm_ext is None:
    raise ImportError("FEQRBOOT_BACKEND=compiled but feqrboot._ipm_ext is not built")

DEFAULT = _requested or ("compiled" if _ipm_ext is not None else "python")

# the compiled kernel releases the GIL, so thread pools scale with it
RELEASES_GIL = {"python": False, "compiled": True}


def get_kernel(name: str | None = None):
    name = DEFAULT if name is None else name
    try:
        return KERNELS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {sorted(KERNELS)}") from None


def available() -> list[str]:
    return sorted(KERNELS)
