"""Kernel backend selection.

Prefers the compiled Cython kernels and falls back to the numpy
implementation when the extension is not built. Override with the
MMKDDA_BACKEND environment variable: "compiled" (fail if missing),
"python" (force the fallback), or "auto" (default).
"""

import os

from . import kernels_py

_requested = os.environ.get("MMKDDA_BACKEND", "auto").lower()

if _requested not in ("auto", "compiled", "python"):
    raise RuntimeError(f"MMKDDA_BACKEND must be auto, compiled or python, got {_requested!r}")

if _requested == "python":
    _impl = kernels_py
else:
    try:
        from . import _convkernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _requested == "compiled":
            raise RuntimeError("MMKDDA_BACKEND=compiled but the extension is not built")
        _impl = kernels_py

conv_forward = _impl.conv_forward
conv_grad_weight = _impl.conv_grad_weight
conv_grad_input = _impl.conv_grad_input


def backend_name():
    """Name of the active kernel backend ("compiled" or "python")."""
    return "python" if _impl is kernels_py else "compiled"
