"""Angular-momentum algebra for hyperfine manifolds.

Conventions
-----------
* Matrix basis order is descending magnetic quantum number: index ``i``
  corresponds to ``m = F - i``.
* Clebsch-Gordan coefficients use the Condon-Shortley phase convention.
* Matrices are dimensionless (units of hbar).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .constants import CONSTANTS, G_J_5S12, RB85_NUCLEAR_SPIN
from .errors import InvalidArgumentError, UndefinedWeightError

F_MAX = 10


def _half(value, name="value") -> Fraction:
    """Return ``value`` as an exact half-integer Fraction or raise."""
    try:
        twice = Fraction(value) * 2
    except (TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"{name}={value!r} is not a number") from exc
    if twice.denominator != 1:
        raise InvalidArgumentError(f"{name}={value!r} is not a half-integer")
    return twice / 2


def _check_spin(F, name="F") -> Fraction:
    f = _half(F, name)
    if f < 0 or f > F_MAX:
        raise InvalidArgumentError(f"{name}={F} outside [0, {F_MAX}]")
    return f


def m_values(F) -> np.ndarray:
    """Magnetic quantum numbers in basis order (descending)."""
    f = _check_spin(F)
    n = int(2 * f) + 1
    return float(f) - np.arange(n, dtype=float)


def m_index(F, m) -> int:
    """Basis index of sublevel ``m`` in manifold ``F``; raises if ``|m| > F``."""
    f = _half(F, "F")
    mm = _half(m, "m")
    if abs(mm) > f:
        raise InvalidArgumentError(f"|m|={mm} exceeds F={f}")
    return int(f - mm)


@lru_cache(maxsize=None)
def _spin_matrices_cached(twice_f: int):
    f = twice_f / 2
    m = f - np.arange(twice_f + 1, dtype=float)
    # <m+1|F+|m> sits one row above the diagonal in descending order
    up = np.sqrt(f * (f + 1) - m[1:] * (m[1:] + 1))
    fplus = np.diag(up, k=1).astype(complex)
    fminus = fplus.conj().T
    fx = 0.5 * (fplus + fminus)
    fy = -0.5j * (fplus - fminus)
    fz = np.diag(m).astype(complex)
    for a in (fx, fy, fz):
        a.setflags(write=False)
    return fx, fy, fz


def spin_matrices(F):
    """Return ``(Fx, Fy, Fz)`` for total angular momentum ``F``.

    Built from the ladder operators with
    ``<m+1|F+|m> = sqrt(F(F+1) - m(m+1))`` in descending-m order.
    """
    f = _check_spin(F)
    return _spin_matrices_cached(int(2 * f))


@dataclass(frozen=True)
class HyperfineManifold:
    """A hyperfine level with its g-factor and spin matrices."""

    F: float
    g_F: float
    Fx: np.ndarray = field(repr=False, compare=False, default=None)
    Fy: np.ndarray = field(repr=False, compare=False, default=None)
    Fz: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        fx, fy, fz = spin_matrices(self.F)
        object.__setattr__(self, "F", float(self.F))
        object.__setattr__(self, "Fx", fx)
        object.__setattr__(self, "Fy", fy)
        object.__setattr__(self, "Fz", fz)

    @property
    def dim(self) -> int:
        return int(round(2 * self.F)) + 1

    @property
    def m(self) -> np.ndarray:
        return m_values(self.F)

    def generator(self, B) -> np.ndarray:
        """``B . F`` for a single field vector."""
        bx, by, bz = np.asarray(B, dtype=float)
        return bx * self.Fx + by * self.Fy + bz * self.Fz


def lande_g(F, J, I, g_J) -> float:
    """Hyperfine Lande factor with the nuclear-magneton term neglected."""
    f, j, i = _half(F, "F"), _half(J, "J"), _half(I, "I")
    if not abs(j - i) <= f <= j + i:
        raise InvalidArgumentError(f"F={f} violates |J-I| <= F <= J+I for J={j}, I={i}")
    if f == 0:
        return 0.0
    ratio = (f * (f + 1) + j * (j + 1) - i * (i + 1)) / (2 * f * (f + 1))
    return float(g_J) * float(ratio)


def rb85_ground(F) -> HyperfineManifold:
    """5S1/2 hyperfine manifold of rubidium 85 (F = 2 or 3)."""
    return HyperfineManifold(float(F), lande_g(F, 0.5, RB85_NUCLEAR_SPIN, G_J_5S12))


def _fact(n: Fraction) -> int:
    return math.factorial(int(n))


@lru_cache(maxsize=65536)
def _cg_exact(j1, m1, j2, m2, J, M):
    # arguments are Fractions; returns (sign, squared magnitude) exactly
    if m1 + m2 != M:
        return 0, Fraction(0)
    if not abs(j1 - j2) <= J <= j1 + j2:
        return 0, Fraction(0)
    if (j1 + j2 + J).denominator != 1:
        return 0, Fraction(0)
    if abs(m1) > j1 or abs(m2) > j2 or abs(M) > J:
        return 0, Fraction(0)
    pref = Fraction(
        (2 * J + 1).numerator
        * _fact(J + j1 - j2) * _fact(J - j1 + j2) * _fact(j1 + j2 - J)
        * _fact(J + M) * _fact(J - M)
        * _fact(j1 - m1) * _fact(j1 + m1) * _fact(j2 - m2) * _fact(j2 + m2),
        _fact(j1 + j2 + J + 1),
    )
    kmin = max(0, int(j2 - J - m1), int(j1 + m2 - J))
    kmax = min(int(j1 + j2 - J), int(j1 - m1), int(j2 + m2))
    total = Fraction(0)
    for k in range(kmin, kmax + 1):
        den = (
            math.factorial(k)
            * _fact(j1 + j2 - J - k)
            * _fact(j1 - m1 - k)
            * _fact(j2 + m2 - k)
            * _fact(J - j2 + m1 + k)
            * _fact(J - j1 - m2 + k)
        )
        total += Fraction((-1) ** k, den)
    if total == 0:
        return 0, Fraction(0)
    return (1 if total > 0 else -1), pref * total * total


def cg_coefficient(j1, m1, j2, m2, J, M) -> float:
    """Clebsch-Gordan coefficient ``<j1 m1; j2 m2 | J M>`` (Racah's formula).

    Evaluated in exact rational arithmetic and rounded once, so the result
    is correct to the last floating-point bit. Returns exactly 0 when
    ``m1 + m2 != M`` or the triangle condition fails.
    """
    args = [_half(v, n) for v, n in zip((j1, m1, j2, m2, J, M), ("j1", "m1", "j2", "m2", "J", "M"))]
    j1f, m1f, j2f, m2f, Jf, Mf = args
    for j, name in ((j1f, "j1"), (j2f, "j2"), (Jf, "J")):
        if j < 0:
            raise InvalidArgumentError(f"{name}={j} is negative")
    for j, m, name in ((j1f, m1f, "m1"), (j2f, m2f, "m2"), (Jf, Mf, "M")):
        if abs(m) > j or (j - m).denominator != 1:
            raise InvalidArgumentError(f"{name}={m} invalid for angular momentum {j}")
    sign, sq = _cg_exact(j1f, m1f, j2f, m2f, Jf, Mf)
    if sign == 0:
        return 0.0
    return sign * math.sqrt(sq)


def r_coefficient(Fg, Fs, Fe, m, alpha, beta) -> float:
    """CG ratio weighting the spin wave between ``|g, m>`` and ``|s, m+alpha-beta>``.

    ``R_m = <Fg m; 1 alpha | Fe m+alpha> / <Fs m+alpha-beta; 1 beta | Fe m+alpha>``

    Raises
    ------
    UndefinedWeightError
        If the denominator vanishes (including a storage sublevel outside
        the ``Fs`` manifold); the channel is then absent.
    """
    for h, name in ((alpha, "alpha"), (beta, "beta")):
        if h not in (-1, 0, 1):
            raise InvalidArgumentError(f"{name}={h} must be -1, 0 or +1")
    fg, fs, fe, mm = _half(Fg, "Fg"), _half(Fs, "Fs"), _half(Fe, "Fe"), _half(m, "m")
    if abs(mm) > fg:
        raise InvalidArgumentError(f"|m|={mm} exceeds Fg={fg}")
    ms = mm + alpha - beta
    me = mm + alpha
    if abs(ms) > fs or abs(me) > fe:
        raise UndefinedWeightError(f"channel m={mm}: sublevel outside manifold (m_s={ms}, m_e={me})")
    den = cg_coefficient(fs, ms, 1, beta, fe, me)
    if den == 0.0:
        raise UndefinedWeightError(f"channel m={mm}: coupling-transition CG coefficient vanishes")
    num = cg_coefficient(fg, mm, 1, alpha, fe, me)
    return num / den


def r_table(Fg, Fs, Fe, alpha, beta) -> dict[float, float | None]:
    """``R_m`` for every ground sublevel, ``None`` where undefined."""
    out: dict[float, float | None] = {}
    for m in m_values(Fg):
        try:
            out[float(m)] = r_coefficient(Fg, Fs, Fe, m, alpha, beta)
        except UndefinedWeightError:
            out[float(m)] = None
    return out


@dataclass(frozen=True)
class RotationMatrix:
    entries: np.ndarray
    manifold: HyperfineManifold
    elapsed: float

    def __matmul__(self, other: "RotationMatrix") -> "RotationMatrix":
        if other.manifold.dim != self.manifold.dim:
            raise InvalidArgumentError("rotation matrices belong to different manifolds")
        return RotationMatrix(self.entries @ other.entries, self.manifold, self.elapsed + other.elapsed)

    def element(self, m_row, m_col) -> complex:
        F = self.manifold.F
        return complex(self.entries[m_index(F, m_row), m_index(F, m_col)])


def larmor_eigensystem(manifold: HyperfineManifold, B):
    """Angular frequencies and eigenvectors of ``g_F mu_B B.F / hbar``.

    ``B`` may have shape ``(3,)`` or ``(..., 3)``. Returns ``(omega, V)`` with
    ``omega`` of shape ``(..., d)`` (rad/s) and ``V`` of shape ``(..., d, d)``
    such that the generator equals ``V diag(omega) V^H``. Zero fields give the
    identity basis and zero frequencies.
    """
    B = np.asarray(B, dtype=float)
    if not np.all(np.isfinite(B)):
        raise InvalidArgumentError("magnetic field contains non-finite values")
    if B.shape[-1] != 3:
        raise InvalidArgumentError(f"field must have trailing dimension 3, got shape {B.shape}")
    lead = B.shape[:-1]
    flat = B.reshape(-1, 3)
    mag = np.sqrt(np.einsum("ij,ij->i", flat, flat))
    d = manifold.dim
    omega = np.zeros((flat.shape[0], d))
    vecs = np.broadcast_to(np.eye(d, dtype=complex), (flat.shape[0], d, d)).copy()
    nz = mag > 0
    if np.any(nz):
        n = flat[nz] / mag[nz, None]
        gen = (
            n[:, 0, None, None] * manifold.Fx
            + n[:, 1, None, None] * manifold.Fy
            + n[:, 2, None, None] * manifold.Fz
        )
        ev, V = np.linalg.eigh(gen)
        scale = manifold.g_F * CONSTANTS.mu_B * mag[nz] / CONSTANTS.hbar
        omega[nz] = ev * scale[:, None]
        vecs[nz] = V
    return omega.reshape(lead + (d,)), vecs.reshape(lead + (d, d))


def field_eigenbasis(manifold: HyperfineManifold, B):
    """``|B|`` and eigenvectors of ``B_hat.F`` ordered by eigenvalue ``-F ... F``.

    The eigenvalues of a unit-direction spin projection are exactly the m
    values, so the Larmor frequencies are ``g_F mu_B |B| m / hbar``. Zero
    fields return the identity (frequencies vanish so ordering is moot).
    """
    B = np.asarray(B, dtype=float)
    if not np.all(np.isfinite(B)):
        raise InvalidArgumentError("magnetic field contains non-finite values")
    flat = B.reshape(-1, 3)
    mag = np.sqrt(np.einsum("ij,ij->i", flat, flat))
    d = manifold.dim
    vecs = np.broadcast_to(np.eye(d, dtype=complex), (flat.shape[0], d, d)).copy()
    nz = mag > 0
    if np.any(nz):
        n = flat[nz] / mag[nz, None]
        gen = (
            n[:, 0, None, None] * manifold.Fx
            + n[:, 1, None, None] * manifold.Fy
            + n[:, 2, None, None] * manifold.Fz
        )
        vecs[nz] = np.linalg.eigh(gen)[1]
    return mag.reshape(B.shape[:-1]), vecs.reshape(B.shape[:-1] + (d, d))


_SPLIT = 134217729.0  # 2**27 + 1


def _two_prod(a, b):
    """``(p, e)`` with ``p = fl(a * b)`` and ``a * b = p + e`` exactly (Dekker)."""
    p = a * b
    ca, cb = _SPLIT * a, _SPLIT * b
    ah = ca - (ca - a)
    bh = cb - (cb - b)
    al, bl = a - ah, b - bh
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def evolve(omega, V, t):
    """``V exp(-i omega t) V^H`` for (batched) eigensystems.

    Phases reach ~1e5 rad at millisecond times, where one ulp is ~1e-11; the
    rounding error of ``omega * t`` is carried separately so the phase is
    that of the exact product.
    """
    p, e = _two_prod(np.asarray(omega, dtype=float), float(t))
    phase = np.exp(-1j * p) * (1.0 - 1j * e)
    return np.einsum("...ik,...k,...jk->...ij", V, phase, V.conj())


def rotation_matrix(manifold: HyperfineManifold, B, t) -> RotationMatrix:
    """Unitary ``exp(-i g_F mu_B (B.F) t / hbar)`` by Hermitian eigendecomposition."""
    t = float(t)
    B = np.asarray(B, dtype=float)
    if not math.isfinite(t) or not np.all(np.isfinite(B)):
        raise InvalidArgumentError("field and time must be finite")
    if B.shape != (3,):
        raise InvalidArgumentError(f"B must be a 3-vector, got shape {B.shape}")
    if t < 0:
        raise InvalidArgumentError(f"t={t} must be non-negative")
    if t == 0 or not np.any(B):
        return RotationMatrix(np.eye(manifold.dim, dtype=complex), manifold, t)
    omega, V = larmor_eigensystem(manifold, B)
    return RotationMatrix(evolve(omega, V, t), manifold, t)


def rotation_piecewise(manifold: HyperfineManifold, segments: Iterable[tuple[Sequence[float], float]]) -> RotationMatrix:
    """Time-ordered product over piecewise-constant field segments.

    The earliest segment acts first, so the result is ``D_n ... D_2 D_1``.
    An empty list gives the identity.
    """
    out = RotationMatrix(np.eye(manifold.dim, dtype=complex), manifold, 0.0)
    for B, duration in segments:
        if duration < 0:
            raise InvalidArgumentError(f"segment duration {duration} is negative")
        out = rotation_matrix(manifold, B, duration) @ out
    return out
