"""Select the event-loop backend at import time.

The compiled extension is used when it is importable; otherwise the
pure-Python loops are used. Setting ``LONGJUMP_PURE=1`` forces the
pure-Python loops.
"""

import os

from . import _pykernels

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

COMPILED_AVAILABLE = _compiled is not None

if os.environ.get("LONGJUMP_PURE", "") not in ("", "0") or _compiled is None:
    kernels = _pykernels
    BACKEND = "python"
else:
    kernels = _compiled
    BACKEND = "compiled"


def get_backend(name=None):
    """Return the kernel module for ``name`` ('python', 'compiled' or None = default)."""
    if name is None:
        return kernels
    if name == "python":
        return _pykernels
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available; rebuild the package")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
