"""Backend selection for the convolution hot loops.

The compiled extension ``mscl._kernels`` is used when it imports cleanly.
Set ``MSCL_PURE_PYTHON=1`` to force the numpy fallback (useful for
benchmarking and for checking that both backends agree).
"""

import os

from . import _fallback

BACKEND = "python"
im2col3d = _fallback.im2col3d
col2im3d = _fallback.col2im3d

if os.environ.get("MSCL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels
    except ImportError:  # extension not built
        _kernels = None
    if _kernels is not None:
        BACKEND = "compiled"
        im2col3d = _kernels.im2col3d
        col2im3d = _kernels.col2im3d


def get_backend(name):
    """Return ``(im2col3d, col2im3d)`` for ``"compiled"`` or ``"python"``."""
    if name == "python":
        return _fallback.im2col3d, _fallback.col2im3d
    if name == "compiled":
        from . import _kernels

        return _kernels.im2col3d, _kernels.col2im3d
    raise ValueError(f"unknown backend {name!r}")
