"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``NCDMM_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the numpy fallback is used.  ``BACKEND`` names the active one.
"""

import os

from . import _kernels_py

NNZ_PER_PAIR = 12


def _select():
    if os.environ.get("NCDMM_PURE_PYTHON", "") not in ("", "0"):
        return _kernels_py, "python"
    try:
        from . import _kernels
    except ImportError:
        return _kernels_py, "python"
    return _kernels, "cython"


_impl, BACKEND = _select()

stencil_batch = _impl.stencil_batch
pair_flux = _impl.pair_flux
