# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops; semantics mirror :mod:`dspimage._fallback` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cos, sin

cnp.import_array()


def biot_savart_segments(const double[:, ::1] starts, const double[:, ::1] ends,
                         const double[:, ::1] points):
    """Sum of straight-segment geometry factors at each point (unit current, no mu0/4pi)."""
    cdef Py_ssize_t n_seg = starts.shape[0]
    cdef Py_ssize_t n_pt = points.shape[0]
    out_arr = np.zeros((n_pt, 3), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t p, s
    cdef double px, py, pz, r1x, r1y, r1z, r2x, r2y, r2z
    cdef double n1, n2, dot, den, fac, cx, cy, cz, bx, by, bz
    with nogil:
        for p in range(n_pt):
            px = points[p, 0]
            py = points[p, 1]
            pz = points[p, 2]
            bx = 0.0
            by = 0.0
            bz = 0.0
            for s in range(n_seg):
                r1x = px - starts[s, 0]
                r1y = py - starts[s, 1]
                r1z = pz - starts[s, 2]
                r2x = px - ends[s, 0]
                r2y = py - ends[s, 1]
                r2z = pz - ends[s, 2]
                n1 = sqrt(r1x * r1x + r1y * r1y + r1z * r1z)
                n2 = sqrt(r2x * r2x + r2y * r2y + r2z * r2z)
                dot = r1x * r2x + r1y * r2y + r1z * r2z
                den = n1 * n2 * (n1 * n2 + dot)
                fac = (n1 + n2) / den
                cx = r1y * r2z - r1z * r2y
                cy = r1z * r2x - r1x * r2z
                cz = r1x * r2y - r1y * r2x
                bx = bx + cx * fac
                by = by + cy * fac
                bz = bz + cz * fac
            out[p, 0] = bx
            out[p, 1] = by
            out[p, 2] = bz
    return out_arr


def spectral_sum(const double complex[:, ::1] coef, const double[::1] rate,
                 const double[::1] harmonics, double tau):
    """``out[p] = sum_k coef[p, k] * exp(1j * rate[p] * harmonics[k] * tau)``."""
    cdef Py_ssize_t n_pt = coef.shape[0]
    cdef Py_ssize_t n_term = coef.shape[1]
    out_arr = np.empty(n_pt, dtype=np.complex128)
    cdef double complex[::1] out = out_arr
    cdef Py_ssize_t p, k
    cdef double ph, re, im, c, s, x
    cdef double complex z
    with nogil:
        for p in range(n_pt):
            re = 0.0
            im = 0.0
            x = rate[p] * tau
            for k in range(n_term):
                ph = x * harmonics[k]
                c = cos(ph)
                s = sin(ph)
                z = coef[p, k]
                re = re + z.real * c - z.imag * s
                im = im + z.real * s + z.imag * c
            out[p] = re + 1j * im
    return out_arr
