"""Spin-wave dephasing kernel and retrieved-image assembly.

For every stored point the retrieval amplitude is multiplied by

    K = sum_{m', m} w_{m'} w_m conj(Dg[m', m]) Ds[m' + d, m + d],    d = alpha - beta

with ``w_m = sqrt(p_m) R_m`` and ``Dg``, ``Ds`` the Larmor rotations of the
ground and storage manifolds. ``K`` is normalised by its field-free value
``sum w_m^2``, so ``eta = Gamma^2 |K|^2`` and ``phi = arg K`` are relative.

Within a piecewise-constant field segment that starts at ``T`` with
accumulated rotations ``Q`` the kernel has the spectral form

    K(T + tau) = sum_{k, l} a_kl b_kl exp(i r (g_g mu_k - g_s nu_l) tau)
    a = Vg^H S Vs,   b = conj(Vg^H Qg) S (Vs^H Qs)^T

where ``V`` are eigenvectors of ``B_hat.F`` with eigenvalues ``mu_k``, ``nu_l``
(exactly the m values), ``r = mu_B |B| / hbar`` and ``S[i, j] = w_i`` on the
channel pairs. Terms sharing a harmonic ``g_g mu_k - g_s nu_l`` are merged, so
each point stores one rate and a short coefficient row. The sum over harmonics
is the hot loop and runs in the compiled backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _backend
from .angmom import HyperfineManifold, field_eigenbasis, lande_g, m_values, r_coefficient
from .constants import CONSTANTS, G_J_5S12, RB85_NUCLEAR_SPIN
from .errors import InvalidArgumentError, NoCouplingError, UndefinedWeightError
from .optics import ComplexField2D, gaussian_blur, retrieve

Z_SUM_MODES = ("coherent", "incoherent")
PZ_MODELS = ("gaussian", "uniform")
DEFAULT_GAMMA_CUTOFF = 1e-13
_BUILD_CHUNK = 32768


def uniform_populations(Fg) -> tuple[float, ...]:
    n = int(round(2 * Fg)) + 1
    return tuple([1.0 / n] * n)


def sp_populations(Fg, efficiency: float = 0.7) -> tuple[float, ...]:
    """State-prepared mixture: ``efficiency`` in m=0, the rest spread uniformly."""
    if not 0 <= efficiency <= 1:
        raise InvalidArgumentError(f"SP efficiency {efficiency} outside [0, 1]")
    if float(Fg) != int(Fg):
        raise InvalidArgumentError("state preparation into m=0 needs an integer Fg")
    n = int(round(2 * Fg)) + 1
    rest = (1.0 - efficiency) / n
    pops = [rest] * n
    pops[n // 2] += efficiency
    return tuple(pops)


@dataclass(frozen=True)
class EnsembleConfig:
    """Atomic ensemble and level scheme.

    ``populations`` are listed in descending m of the ground manifold; the
    default is uniform. ``g_g``/``g_s`` default to rubidium-85 5S1/2 values.
    """

    sigma: float = 1e-3
    r_a: float | None = None
    n_z: int = 21
    populations: tuple[float, ...] | None = None
    Fg: float = 2
    Fs: float = 3
    Fe: float = 3
    alpha: int = 1
    beta: int = -1
    pz_model: str = "gaussian"
    g_g: float | None = None
    g_s: float | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidArgumentError("sigma must be positive")
        if self.r_a is None:
            object.__setattr__(self, "r_a", 2 * self.sigma)
        if not self.r_a > 0:
            raise InvalidArgumentError("r_a must be positive")
        if int(self.n_z) != self.n_z or self.n_z < 3 or self.n_z % 2 == 0:
            raise InvalidArgumentError(f"n_z={self.n_z} must be odd and >= 3")
        if self.pz_model not in PZ_MODELS:
            raise InvalidArgumentError(f"unknown pz_model {self.pz_model!r}")
        if self.populations is None:
            object.__setattr__(self, "populations", uniform_populations(self.Fg))
        pops = tuple(float(p) for p in self.populations)
        object.__setattr__(self, "populations", pops)
        if len(pops) != int(round(2 * self.Fg)) + 1:
            raise InvalidArgumentError(f"{len(pops)} populations given for Fg={self.Fg}")
        if any(p < 0 for p in pops) or abs(sum(pops) - 1.0) > 1e-12:
            raise InvalidArgumentError(f"populations must be non-negative and sum to 1, got {pops}")
        if self.g_g is None:
            object.__setattr__(self, "g_g", lande_g(self.Fg, 0.5, RB85_NUCLEAR_SPIN, G_J_5S12))
        if self.g_s is None:
            object.__setattr__(self, "g_s", lande_g(self.Fs, 0.5, RB85_NUCLEAR_SPIN, G_J_5S12))

    @property
    def delta(self) -> int:
        return self.alpha - self.beta

    @property
    def ground(self) -> HyperfineManifold:
        return HyperfineManifold(self.Fg, self.g_g)

    @property
    def storage(self) -> HyperfineManifold:
        return HyperfineManifold(self.Fs, self.g_s)


def z_grid(cfg: EnsembleConfig):
    """Slice centres, weights ``P(z)`` and spacing with ``sum P dz = 1``."""
    z = np.linspace(-cfg.r_a / 2, cfg.r_a / 2, cfg.n_z)
    dz = cfg.r_a / (cfg.n_z - 1)
    if cfg.pz_model == "gaussian":
        P = np.exp(-2 * z ** 2 / cfg.sigma ** 2)
    else:
        P = np.ones_like(z)
    P = P / (P.sum() * dz)
    return z, P, dz


def gamma_envelope(cfg: EnsembleConfig, x, y, z):
    """Peak-normalised Gaussian density envelope ``exp(-(x^2+y^2+z^2)/sigma^2)``."""
    x, y, z = np.asarray(x, dtype=float), np.asarray(y, dtype=float), np.asarray(z, dtype=float)
    return np.exp(-(x * x + y * y + z * z) / cfg.sigma ** 2)


@dataclass(frozen=True)
class SpinWaveChannel:
    m_g: float
    m_s: float
    R: float
    weight: float


def channels(cfg: EnsembleConfig) -> list[SpinWaveChannel]:
    """Populated, coupled spin-wave channels with weights ``sqrt(p_m) R_m``."""
    out = []
    for m, p in zip(m_values(cfg.Fg), cfg.populations):
        if p == 0:
            continue
        try:
            R = r_coefficient(cfg.Fg, cfg.Fs, cfg.Fe, m, cfg.alpha, cfg.beta)
        except UndefinedWeightError:
            continue
        if R == 0:
            continue
        out.append(SpinWaveChannel(float(m), float(m + cfg.delta), R, math.sqrt(p) * R))
    if not out:
        raise NoCouplingError(
            f"no populated channel couples for Fg={cfg.Fg}, Fs={cfg.Fs}, Fe={cfg.Fe}, "
            f"alpha={cfg.alpha}, beta={cfg.beta}"
        )
    return out


def channel_matrix(cfg: EnsembleConfig) -> np.ndarray:
    """``S[i, j] = w`` where ground index i couples to storage index j."""
    dg = int(round(2 * cfg.Fg)) + 1
    ds = int(round(2 * cfg.Fs)) + 1
    S = np.zeros((dg, ds))
    for ch in channels(cfg):
        S[int(round(cfg.Fg - ch.m_g)), int(round(cfg.Fs - ch.m_s))] = ch.weight
    return S


@dataclass(frozen=True)
class DephasingMap:
    """Relative efficiency, phase and complex kernel on an ``(N, N, n_z)`` grid."""

    eta: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    K: np.ndarray = field(repr=False)
    gamma: np.ndarray = field(repr=False)
    t: float

    @classmethod
    def from_kernel(cls, K: np.ndarray, gamma: np.ndarray, t: float) -> "DephasingMap":
        return cls(gamma ** 2 * np.abs(K) ** 2, np.angle(K), K, gamma, t)


FieldSampler = Callable[[np.ndarray], np.ndarray]


def _sample(source, points: np.ndarray) -> np.ndarray:
    if hasattr(source, "field"):
        return np.asarray(source.field(points), dtype=float)
    if callable(source):
        return np.asarray(source(points), dtype=float)
    arr = np.asarray(source, dtype=float)
    if arr.shape == (3,):
        return np.broadcast_to(arr, points.shape).copy()
    if arr.shape != points.shape:
        raise InvalidArgumentError(f"field samples have shape {arr.shape}, expected {points.shape}")
    return arr


def _harmonics(cfg: EnsembleConfig):
    """Distinct harmonics ``g_g mu_k - g_s nu_l`` and the 0/1 merge matrix."""
    mu = m_values(cfg.Fg)[::-1]
    nu = m_values(cfg.Fs)[::-1]
    raw = (cfg.g_g * mu[:, None] - cfg.g_s * nu[None, :]).ravel()
    keys = np.round(raw, 12)
    uniq, inv = np.unique(keys, return_inverse=True)
    M = np.zeros((raw.size, uniq.size))
    M[np.arange(raw.size), inv] = 1.0
    h = np.array([raw[inv == k].mean() for k in range(uniq.size)])
    return h, M


class DephasingModel:
    """Spectral kernel ``K(t)`` over a fixed point set and field schedule.

    Parameters
    ----------
    cfg : EnsembleConfig
    fields : sequence of (B, duration)
        ``B`` is an array of shape ``(P, 3)`` in tesla (one row per point) and
        ``duration`` in seconds; the last duration may be ``inf``.
    """

    def __init__(self, cfg: EnsembleConfig, fields: Sequence[tuple[np.ndarray, float]]):
        if not fields:
            raise InvalidArgumentError("field schedule is empty")
        self.cfg = cfg
        S = channel_matrix(cfg)
        self.k0 = float(np.sum(S * S))
        self.harmonics, M = _harmonics(cfg)
        fields = [(np.asarray(B, dtype=float), float(d)) for B, d in fields]
        n_pt = fields[0][0].shape[0]
        for k, (B, duration) in enumerate(fields):
            if B.shape != (n_pt, 3):
                raise InvalidArgumentError("every schedule segment must sample the same points")
            if not duration >= 0:
                raise InvalidArgumentError(f"segment duration {duration} must be non-negative")
            if not np.all(np.isfinite(B)):
                raise InvalidArgumentError("magnetic field contains non-finite values")
            if not math.isfinite(duration) and k != len(fields) - 1:
                raise InvalidArgumentError("only the last segment may be open-ended")
        self.durations = [d for _, d in fields]
        self.starts = list(np.concatenate([[0.0], np.cumsum(self.durations[:-1])]))
        self.total = float(sum(self.durations))
        self.n_points = n_pt
        self.coef = [np.empty((n_pt, self.harmonics.size), dtype=complex) for _ in fields]
        self.rate = [np.empty(n_pt) for _ in fields]
        for lo in range(0, n_pt, _BUILD_CHUNK):
            sl = slice(lo, lo + _BUILD_CHUNK)
            self._build(cfg, S, M, [(B[sl], d) for B, d in fields], sl)

    def _build(self, cfg, S, M, fields, sl):
        g, s = cfg.ground, cfg.storage
        mu = m_values(cfg.Fg)[::-1]
        nu = m_values(cfg.Fs)[::-1]
        gam = CONSTANTS.mu_B / CONSTANTS.hbar
        Qg = Qs = None
        for j, (B, duration) in enumerate(fields):
            mag, Vg = field_eigenbasis(g, B)
            _, Vs = field_eigenbasis(s, B)
            VgH = np.conj(np.swapaxes(Vg, -1, -2))
            VsH = np.conj(np.swapaxes(Vs, -1, -2))
            a = VgH @ S @ Vs
            if Qg is None:
                b = np.conj(a)
            else:
                b = np.conj(VgH @ Qg) @ S @ np.swapaxes(VsH @ Qs, -1, -2)
            self.coef[j][sl] = (a * b).reshape(a.shape[0], -1) @ M
            r = gam * mag
            self.rate[j][sl] = r
            del a, b
            if math.isfinite(duration) and j + 1 < len(fields):
                ph_g = np.exp(-1j * cfg.g_g * np.outer(r * duration, mu))
                ph_s = np.exp(-1j * cfg.g_s * np.outer(r * duration, nu))
                Dg = np.einsum("pik,pk,pkj->pij", Vg, ph_g, VgH)
                Ds = np.einsum("pik,pk,pkj->pij", Vs, ph_s, VsH)
                Qg = Dg if Qg is None else Dg @ Qg
                Qs = Ds if Qs is None else Ds @ Qs

    def kernel(self, t: float) -> np.ndarray:
        """Normalised ``K`` at every point (complex, shape ``(P,)``)."""
        if t < 0 or t > self.total * (1 + 1e-12):
            raise InvalidArgumentError(f"t={t} outside the field schedule [0, {self.total}]")
        # segments are closed on the right: a time on a boundary belongs to the earlier segment
        j = 0
        while j + 1 < len(self.starts) and t > self.starts[j + 1]:
            j += 1
        tau = t - self.starts[j]
        return _backend.spectral_sum(self.coef[j], self.rate[j], self.harmonics, tau) / self.k0

    def scaled(self, factor: float) -> "DephasingModel":
        """Same schedule with every field multiplied by ``factor >= 0`` (single segment only)."""
        if len(self.coef) != 1:
            raise InvalidArgumentError("field scaling is only exact for single-segment schedules")
        if not factor >= 0:
            raise InvalidArgumentError("field scale factor must be non-negative")
        new = object.__new__(DephasingModel)
        new.__dict__.update(self.__dict__)
        new.rate = [self.rate[0] * factor]
        return new


def dephasing_kernel(cfg: EnsembleConfig, schedule, t: float, xs, ys) -> DephasingMap:
    """Dense ``DephasingMap`` on the lattice ``xs x ys x z_grid(cfg)``.

    ``schedule`` is a list of ``(source, duration)`` where ``source`` is a
    :class:`~dspimage.fields.CoilAssembly`, a callable ``points -> B`` or a
    constant 3-vector.
    """
    z, _, _ = z_grid(cfg)
    # array layout [row, col, z] = [y, x, z]
    Y, X, Z = np.meshgrid(np.asarray(ys, float), np.asarray(xs, float), z, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    model = DephasingModel(cfg, [(_sample(src, pts), dur) for src, dur in schedule])
    K = model.kernel(t).reshape(X.shape)
    return DephasingMap.from_kernel(K, gamma_envelope(cfg, X, Y, Z), t)


@dataclass(frozen=True)
class BlurSpec:
    """Atomic-motion blur; ``radius(t)`` is the Gaussian 1/e radius in the Fourier plane."""

    mode: str = "ballistic"
    temperature: float | None = 200e-6
    mass: float | None = None
    D_coeff: float | None = None
    velocity: float | None = None

    def radius(self, t: float) -> float:
        from .constants import CONSTANTS
        from .optics import blur_radius

        mass = self.mass if self.mass is not None else CONSTANTS.m_atom
        return blur_radius(t, self.mode, self.temperature, mass, self.D_coeff, self.velocity)


def _apply_blur(u: ComplexField2D, blur: BlurSpec | None, t: float) -> ComplexField2D:
    if blur is None or t == 0:
        return u
    return gaussian_blur(u, blur.radius(t))


@dataclass(frozen=True)
class RetrievedImage:
    intensity: np.ndarray = field(repr=False)
    amplitude: np.ndarray | None = field(repr=False)
    pitch: float
    energy: float


def retrieved_image(u_f: ComplexField2D, dmap: DephasingMap, cfg: EnsembleConfig, wavelength: float,
                    focal_length: float, z_sum: str = "coherent", blur: BlurSpec | None = None,
                    ) -> RetrievedImage:
    """Image-plane intensity from a dense dephasing map.

    Normalised so the field-free ``t = 0`` image has unit peak. ``energy`` is
    the unnormalised total (``sum I pitch^2``) for efficiency ratios.
    """
    if u_f.plane != "fourier":
        raise InvalidArgumentError("retrieved_image expects a Fourier-plane field")
    if dmap.K.shape[:2] != u_f.samples.shape or dmap.K.shape[2] != cfg.n_z:
        raise InvalidArgumentError(f"dephasing map shape {dmap.K.shape} does not match the field grid")
    _, P, dz = z_grid(cfg)
    w = P * dz
    amp = dmap.gamma * np.conj(dmap.K)
    ref_amp = dmap.gamma.astype(complex)
    img, a = _combine(u_f, amp, w, wavelength, focal_length, z_sum, blur, dmap.t)
    ref, _ = _combine(u_f, ref_amp, w, wavelength, focal_length, z_sum, None, 0.0)
    return RetrievedImage(img / ref.max(), a, u_f.pitch, float(img.sum() * u_f.pitch ** 2))


def _combine(u_f, amp, w, wavelength, focal_length, z_sum, blur, t):
    if z_sum == "coherent":
        A = ComplexField2D(np.tensordot(amp, w, axes=([2], [0])) * u_f.samples, u_f.pitch, "fourier")
        A = _apply_blur(A, blur, t)
        out = retrieve(A, wavelength, focal_length)
        return out.intensity, out.samples
    if z_sum == "incoherent":
        total = np.zeros(u_f.samples.shape)
        for k in range(amp.shape[2]):
            a = ComplexField2D(amp[:, :, k] * u_f.samples, u_f.pitch, "fourier")
            total += w[k] * retrieve(_apply_blur(a, blur, t), wavelength, focal_length).intensity
        return total, None
    raise InvalidArgumentError(f"unknown z_sum mode {z_sum!r}")


class PatternMemory:
    """A Fourier-plane pattern stored in an ensemble under a field schedule.

    Kernels are evaluated only where ``Gamma >= gamma_cutoff``; elsewhere the
    field-free value ``K = 1`` is used, which changes amplitudes by less than
    the cutoff.

    Parameters
    ----------
    u_f : ComplexField2D
        Stored Fourier-plane amplitude.
    cfg : EnsembleConfig
    schedule : sequence of (source, duration)
        See :func:`dephasing_kernel`.
    field_cache : dict, optional
        Shared between instances to reuse coil samples across sweeps.
    """

    def __init__(self, u_f: ComplexField2D, cfg: EnsembleConfig, schedule, wavelength: float,
                 focal_length: float, z_sum: str = "coherent", blur: BlurSpec | None = None,
                 gamma_cutoff: float = DEFAULT_GAMMA_CUTOFF, field_cache: dict | None = None):
        if u_f.plane != "fourier":
            raise InvalidArgumentError("PatternMemory stores a Fourier-plane field")
        if z_sum not in Z_SUM_MODES:
            raise InvalidArgumentError(f"unknown z_sum mode {z_sum!r}")
        self.u_f = u_f
        self.cfg = cfg
        self.wavelength = wavelength
        self.focal_length = focal_length
        self.z_sum = z_sum
        self.blur = blur
        n = u_f.n
        c = u_f.coords()
        z, P, dz = z_grid(cfg)
        self.w = P * dz
        # array layout [row, col, z] = [y, x, z]
        Y, X, Z = np.meshgrid(c, c, z, indexing="ij")
        self.gamma = gamma_envelope(cfg, X, Y, Z)
        mask = self.gamma >= gamma_cutoff
        self.index = np.flatnonzero(mask)
        pts = np.stack([X.ravel()[self.index], Y.ravel()[self.index], Z.ravel()[self.index]], axis=1)
        fields = [(_cached_sample(src, pts, field_cache), dur) for src, dur in schedule]
        self.model = DephasingModel(cfg, fields)
        self.shape = (n, n, cfg.n_z)
        g_in = self.gamma.ravel()[self.index]
        self._slice = self.index % cfg.n_z
        self._pix = self.index // cfg.n_z
        self._wg_in = self.w[self._slice] * g_in
        full_base = np.tensordot(self.gamma, self.w, axes=([2], [0]))
        in_base = np.bincount(self._pix, weights=self._wg_in, minlength=n * n).reshape(n, n)
        self._out_base = full_base - in_base
        self._ref = None

    def with_model(self, model: DephasingModel) -> "PatternMemory":
        new = object.__new__(PatternMemory)
        new.__dict__.update(self.__dict__)
        new.model = model
        return new

    def kernel(self, t: float) -> np.ndarray:
        """Dense normalised ``K`` with shape ``(N, N, n_z)``."""
        K = np.ones(self.shape[0] * self.shape[1] * self.shape[2], dtype=complex)
        K[self.index] = self.model.kernel(t)
        return K.reshape(self.shape)

    def dephasing_map(self, t: float) -> DephasingMap:
        return DephasingMap.from_kernel(self.kernel(t), self.gamma, t)

    def fourier_amplitude(self, t: float) -> np.ndarray:
        """Coherent z-sum of ``Gamma conj(K) u_f`` before blur."""
        n = self.shape[0]
        kc = np.conj(self.model.kernel(t)) * self._wg_in
        acc = (np.bincount(self._pix, weights=kc.real, minlength=n * n)
               + 1j * np.bincount(self._pix, weights=kc.imag, minlength=n * n)).reshape(n, n)
        return (acc + self._out_base) * self.u_f.samples

    def _raw_image(self, t: float, K_dense=None):
        if self.z_sum == "coherent":
            A = ComplexField2D(self.fourier_amplitude(t), self.u_f.pitch, "fourier")
            A = _apply_blur(A, self.blur, t)
            out = retrieve(A, self.wavelength, self.focal_length)
            return out.intensity, out.samples
        K = self.kernel(t) if K_dense is None else K_dense
        amp = self.gamma * np.conj(K)
        return _combine(self.u_f, amp, self.w, self.wavelength, self.focal_length, "incoherent", self.blur, t)

    @property
    def reference(self) -> np.ndarray:
        """Field-free ``t = 0`` intensity (unnormalised)."""
        if self._ref is None:
            if self.z_sum == "coherent":
                A = ComplexField2D(np.tensordot(self.gamma, self.w, axes=([2], [0])) * self.u_f.samples,
                                   self.u_f.pitch, "fourier")
                self._ref = retrieve(A, self.wavelength, self.focal_length).intensity
            else:
                self._ref, _ = _combine(self.u_f, self.gamma.astype(complex), self.w, self.wavelength,
                                        self.focal_length, "incoherent", None, 0.0)
        return self._ref

    def image(self, t: float) -> RetrievedImage:
        raw, amp = self._raw_image(t)
        ref = self.reference
        return RetrievedImage(raw / ref.max(), amp, self.u_f.pitch, float(raw.sum() * self.u_f.pitch ** 2))

    def reference_image(self) -> np.ndarray:
        ref = self.reference
        return ref / ref.max()

    def efficiency(self, t: float) -> float:
        """Retrieved energy relative to the field-free ``t = 0`` retrieval."""
        if self.z_sum == "coherent" and self.blur is None:
            a = self.fourier_amplitude(t)
            a0 = self._reference_fourier()
            return float(np.sum(np.abs(a) ** 2) / np.sum(np.abs(a0) ** 2))
        raw, _ = self._raw_image(t)
        return float(raw.sum() / self.reference.sum())

    def _reference_fourier(self) -> np.ndarray:
        return np.tensordot(self.gamma, self.w, axes=([2], [0])) * self.u_f.samples


def _cached_sample(source, pts: np.ndarray, cache: dict | None) -> np.ndarray:
    loops = getattr(source, "loops", None)
    if cache is None or loops is None:
        return _sample(source, pts)
    key = (loops, pts.shape, hash(pts.tobytes()))
    if key not in cache:
        from .fields import CoilAssembly

        cache[key] = _sample(CoilAssembly(loops), pts)
    return cache[key] + np.asarray(source.uniform_bias)


def efficiency_curve(memory: PatternMemory, times: Sequence[float]) -> list[tuple[float, float]]:
    """``(t, efficiency)`` pairs; times must be non-negative and increasing."""
    times = list(times)
    if any(t < 0 for t in times) or any(b <= a for a, b in zip(times, times[1:])):
        raise InvalidArgumentError("times must be non-negative and strictly increasing")
    return [(t, memory.efficiency(t)) for t in times]
