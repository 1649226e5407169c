"""Backend selection for the convolution patch kernels.

The compiled extension is preferred. Set ``TRAVELGAN_PURE_PYTHON=1`` to force
the numpy fallback (the benchmark does this to compare both).
"""

import os

from . import _kernels_py

BACKEND = "python"
im2col = _kernels_py.im2col
col2im = _kernels_py.col2im

if os.environ.get("TRAVELGAN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        im2col = _compiled.im2col
        col2im = _compiled.col2im
        BACKEND = "cython"


def backends():
    """Mapping of every importable backend name to its (im2col, col2im) pair."""
    found = {"python": (_kernels_py.im2col, _kernels_py.col2im)}
    try:
        from . import _kernels as _compiled
    except ImportError:
        return found
    found["cython"] = (_compiled.im2col, _compiled.col2im)
    return found
