"""Kernel backend selection.

The compiled extension is used when it imports; set ``DSPIMAGE_PURE_PYTHON=1``
to force the numpy fallback.
"""

import os

import numpy as np

from . import _fallback

BACKEND = "python"
kernels = _fallback

if os.environ.get("DSPIMAGE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        kernels = _compiled
        BACKEND = "cython"


def biot_savart_segments(starts, ends, points):
    return kernels.biot_savart_segments(
        np.ascontiguousarray(starts, dtype=np.float64),
        np.ascontiguousarray(ends, dtype=np.float64),
        np.ascontiguousarray(points, dtype=np.float64),
    )


def spectral_sum(coef, rate, harmonics, tau):
    return kernels.spectral_sum(
        np.ascontiguousarray(coef, dtype=np.complex128),
        np.ascontiguousarray(rate, dtype=np.float64),
        np.ascontiguousarray(harmonics, dtype=np.float64),
        float(tau),
    )
