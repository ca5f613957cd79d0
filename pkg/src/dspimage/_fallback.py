"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np

_CHUNK = 4096


def biot_savart_segments(starts, ends, points):
    """Sum of straight-segment geometry factors at each point (unit current, no mu0/4pi)."""
    starts = np.ascontiguousarray(starts, dtype=float)
    ends = np.ascontiguousarray(ends, dtype=float)
    points = np.ascontiguousarray(points, dtype=float)
    out = np.zeros((points.shape[0], 3))
    for lo in range(0, points.shape[0], _CHUNK):
        p = points[lo:lo + _CHUNK, None, :]
        r1 = p - starts[None]
        r2 = p - ends[None]
        n1 = np.sqrt(np.einsum("psk,psk->ps", r1, r1))
        n2 = np.sqrt(np.einsum("psk,psk->ps", r2, r2))
        dot = np.einsum("psk,psk->ps", r1, r2)
        fac = (n1 + n2) / (n1 * n2 * (n1 * n2 + dot))
        out[lo:lo + _CHUNK] = np.einsum("psk,ps->pk", np.cross(r1, r2), fac)
    return out


def spectral_sum(coef, rate, harmonics, tau):
    """``out[p] = sum_k coef[p, k] * exp(1j * rate[p] * harmonics[k] * tau)``."""
    out = np.empty(coef.shape[0], dtype=complex)
    for lo in range(0, coef.shape[0], 8 * _CHUNK):
        sl = slice(lo, lo + 8 * _CHUNK)
        phase = np.exp(1j * np.outer(rate[sl] * tau, harmonics))
        out[sl] = np.einsum("pk,pk->p", coef[sl], phase)
    return out
