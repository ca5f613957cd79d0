"""Magnetic-field landscapes from circular coils and uniform bias fields.

Loops are discretised into straight segments whose field is integrated
exactly (finite-wire Biot-Savart). The polygon vertex radius is chosen so the
polygon encloses the same area as the circle, which removes the leading
``(pi/n)^2`` discretisation error.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _backend
from .constants import CONSTANTS
from .errors import InvalidArgumentError, NearSingularityError

DEFAULT_SEGMENTS = 720
NEAR_WIRE_SEGMENTS = 10.0


def _vec3(v, name) -> tuple[float, float, float]:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"{name} must be a finite 3-vector, got {v!r}")
    return (float(a[0]), float(a[1]), float(a[2]))


def _perpendicular_basis(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    trial = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(axis, trial)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    return u, v


@dataclass(frozen=True)
class CoilLoop:
    """A circular current loop.

    Positive ``current`` circulates right-handedly about ``axis`` so the
    field at the centre points along ``+axis``.
    """

    center: tuple[float, float, float]
    axis: tuple[float, float, float]
    radius: float
    current: float
    turns: int = 1
    segments: int = DEFAULT_SEGMENTS

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        ax = np.asarray(_vec3(self.axis, "axis"))
        norm = np.linalg.norm(ax)
        if norm == 0:
            raise InvalidArgumentError("loop axis must be non-zero")
        object.__setattr__(self, "axis", tuple(float(c) for c in ax / norm))
        if not self.radius > 0:
            raise InvalidArgumentError(f"loop radius must be positive, got {self.radius}")
        if int(self.turns) != self.turns or self.turns < 1:
            raise InvalidArgumentError(f"turns must be a positive integer, got {self.turns}")
        if int(self.segments) != self.segments or self.segments < 8:
            raise InvalidArgumentError(f"segments must be an integer >= 8, got {self.segments}")
        if not math.isfinite(self.current):
            raise InvalidArgumentError("current must be finite")

    @property
    def segment_length(self) -> float:
        return 2 * math.pi * self.radius / self.segments

    def vertices(self) -> np.ndarray:
        """Closed polygon, shape ``(segments + 1, 3)``."""
        n = self.segments
        a = math.pi / n
        r_v = self.radius * math.sqrt(a / (math.sin(a) * math.cos(a)))
        axis = np.asarray(self.axis)
        u, v = _perpendicular_basis(axis)
        theta = 2 * math.pi * np.arange(n + 1) / n
        theta[-1] = 0.0
        pts = r_v * (np.cos(theta)[:, None] * u + np.sin(theta)[:, None] * v)
        return pts + np.asarray(self.center)

    def wire_distance(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(self.center)
        h = p @ np.asarray(self.axis)
        rho = np.sqrt(np.maximum(np.einsum("ij,ij->i", p, p) - h * h, 0.0))
        return np.hypot(rho - self.radius, h)

    def scaled(self, factor: float) -> "CoilLoop":
        return CoilLoop(self.center, self.axis, self.radius, self.current * factor, self.turns, self.segments)


def loop_field(loop: CoilLoop, points) -> np.ndarray:
    """Field (T) of one loop at ``points`` (shape ``(3,)`` or ``(P, 3)``)."""
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != 3 or not np.all(np.isfinite(pts)):
        raise InvalidArgumentError("points must be finite 3-vectors")
    guard = NEAR_WIRE_SEGMENTS * loop.segment_length
    dist = loop.wire_distance(pts)
    if np.any(dist < guard):
        i = int(np.argmin(dist))
        raise NearSingularityError(
            f"point {pts[i].tolist()} is {dist[i]:.3e} m from the wire (< {guard:.3e} m)"
        )
    verts = loop.vertices()
    geo = _backend.biot_savart_segments(verts[:-1], verts[1:], pts)
    out = geo * (CONSTANTS.mu_0 * loop.turns * loop.current / (4 * math.pi))
    return out[0] if single else out


@dataclass(frozen=True)
class CoilAssembly:
    loops: tuple[CoilLoop, ...] = ()
    uniform_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "loops", tuple(self.loops))
        object.__setattr__(self, "uniform_bias", _vec3(self.uniform_bias, "uniform_bias"))

    def __add__(self, other: "CoilAssembly") -> "CoilAssembly":
        bias = np.add(self.uniform_bias, other.uniform_bias)
        return CoilAssembly(self.loops + other.loops, bias)

    def scaled(self, factor: float) -> "CoilAssembly":
        """All loop currents multiplied by ``factor``; bias unchanged."""
        return CoilAssembly(tuple(lp.scaled(factor) for lp in self.loops), self.uniform_bias)

    def field(self, points) -> np.ndarray:
        return assembly_field(self, points)


def assembly_field(assembly: CoilAssembly, points) -> np.ndarray:
    """Vector sum of all loop fields plus the uniform bias (T)."""
    pts = np.asarray(points, dtype=float)
    out = np.zeros(np.atleast_2d(pts).shape)
    for lp in assembly.loops:
        out += loop_field(lp, np.atleast_2d(pts))
    out += np.asarray(assembly.uniform_bias)
    return out[0] if pts.ndim == 1 else out


def uniform_field(b_tesla, direction=(0.0, 0.0, 1.0)) -> CoilAssembly:
    d = np.asarray(_vec3(direction, "direction"))
    n = np.linalg.norm(d)
    if n == 0:
        raise InvalidArgumentError("bias direction must be non-zero")
    return CoilAssembly((), tuple(b_tesla * d / n))


def coil_pair(radius, separation, turns, current, *, anti=False, axis=(0, 0, 1), center=(0, 0, 0),
              segments=DEFAULT_SEGMENTS) -> CoilAssembly:
    """Two coaxial loops at ``center +/- separation/2 * axis``.

    ``anti=True`` reverses the second loop's current (anti-Helmholtz, a
    quadrupole with zero field at the centre).
    """
    ax = np.asarray(_vec3(axis, "axis"))
    ax = ax / np.linalg.norm(ax)
    c = np.asarray(_vec3(center, "center"))
    first = CoilLoop(tuple(c + 0.5 * separation * ax), tuple(ax), radius, current, turns, segments)
    second = CoilLoop(tuple(c - 0.5 * separation * ax), tuple(ax), radius,
                      -current if anti else current, turns, segments)
    return CoilAssembly((first, second))


def helmholtz_pair(radius, turns, current, **kw) -> CoilAssembly:
    return coil_pair(radius, radius, turns, current, anti=False, **kw)


def anti_helmholtz_pair(radius, separation, turns, current, **kw) -> CoilAssembly:
    return coil_pair(radius, separation, turns, current, anti=True, **kw)


def field_gradient(assembly: CoilAssembly, point, step: float = 1e-4) -> np.ndarray:
    """Central-difference Jacobian ``G[i, j] = dB_j / dx_i`` (T/m)."""
    if not step > 0:
        raise InvalidArgumentError(f"step must be positive, got {step}")
    p = np.asarray(_vec3(point, "point"))
    offsets = np.concatenate([np.eye(3) * step, -np.eye(3) * step])
    b = assembly_field(assembly, p + offsets)
    return (b[:3] - b[3:]) / (2 * step)


def ensemble_average_field(assembly: CoilAssembly, sigma: float, *, mode: str = "average",
                           center=(0.0, 0.0, 0.0), order: int = 16) -> float:
    """Density-weighted mean (or maximum) of ``|B|`` over a Gaussian ensemble.

    The density is ``exp(-r^2 / sigma^2)``; the average uses a tensor
    Gauss-Hermite rule of ``order`` points per axis. ``mode="max"`` returns the
    largest ``|B|`` within radius ``sigma``.
    """
    c = np.asarray(_vec3(center, "center"))
    if mode == "average":
        x, w = np.polynomial.hermite.hermgauss(order)
        x = x * sigma
        X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
        W = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
        pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1) + c
        mag = np.linalg.norm(assembly_field(assembly, pts), axis=1)
        return float(np.dot(W, mag) / W.sum())
    if mode == "max":
        g = np.linspace(-sigma, sigma, 21)
        X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
        pts = pts[np.einsum("ij,ij->i", pts, pts) <= sigma * sigma + 1e-30] + c
        return float(np.linalg.norm(assembly_field(assembly, pts), axis=1).max())
    raise InvalidArgumentError(f"unknown calibration mode {mode!r}")


def calibrate_current(assembly: CoilAssembly, target_tesla: float, sigma: float, *,
                      mode: str = "average", center=(0.0, 0.0, 0.0)) -> CoilAssembly:
    """Rescale loop currents so the ensemble field statistic equals ``target_tesla``.

    The field is linear in the currents; the bias must be zero for the
    rescaling to be exact.
    """
    if any(assembly.uniform_bias):
        raise InvalidArgumentError("calibrate coils without a uniform bias")
    if target_tesla < 0:
        raise InvalidArgumentError("calibration target must be non-negative")
    now = ensemble_average_field(assembly, sigma, mode=mode, center=center)
    if now == 0:
        raise InvalidArgumentError("assembly produces no field over the ensemble")
    return assembly.scaled(target_tesla / now)


def default_coil_pair_ii(current: float = 1.0) -> CoilAssembly:
    """Anti-Helmholtz model of the inhomogeneous-field coils (axis along z)."""
    return anti_helmholtz_pair(0.1, 0.15, 50, current)


@dataclass(frozen=True)
class FieldMap:
    """Field samples on a regular lattice; ``values[i, j, k]`` is B at (xs[i], ys[j], zs[k])."""

    xs: np.ndarray
    ys: np.ndarray
    zs: np.ndarray
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        shape = (len(self.xs), len(self.ys), len(self.zs), 3)
        if self.values.shape != shape:
            raise InvalidArgumentError(f"field map values have shape {self.values.shape}, expected {shape}")
        for axis in (self.xs, self.ys, self.zs):
            if len(axis) > 1 and not np.all(np.diff(axis) > 0):
                raise InvalidArgumentError("field map axes must be strictly increasing")

    @classmethod
    def sample(cls, assembly: CoilAssembly, xs, ys, zs) -> "FieldMap":
        xs, ys, zs = (np.asarray(a, dtype=float) for a in (xs, ys, zs))
        X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
        vals = assembly_field(assembly, pts).reshape(X.shape + (3,))
        return cls(xs, ys, zs, vals)

    def write_csv(self, path) -> None:
        X, Y, Z = np.meshgrid(self.xs, self.ys, self.zs, indexing="ij")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x_m", "y_m", "z_m", "Bx_T", "By_T", "Bz_T"])
            for x, y, z, b in zip(X.ravel(), Y.ravel(), Z.ravel(), self.values.reshape(-1, 3)):
                w.writerow([f"{x:.9e}", f"{y:.9e}", f"{z:.9e}", f"{b[0]:.9e}", f"{b[1]:.9e}", f"{b[2]:.9e}"])


@dataclass(frozen=True)
class ProbeCoilSpec:
    chi: float
    turns: int
    area: float

    def __post_init__(self):
        if not self.chi > 0:
            raise InvalidArgumentError("chi must be positive")
        if int(self.turns) != self.turns or self.turns < 1:
            raise InvalidArgumentError("probe coil turns must be a positive integer")
        if not self.area > 0:
            raise InvalidArgumentError("probe coil area must be positive")


def probe_rate_estimate(spec: ProbeCoilSpec, voltage_trace: Sequence[tuple[float, float]]):
    """Field-rate estimate ``dB/dt = -chi U / (N S)`` from a probe-coil voltage trace.

    Returns ``(rates, delta_B)`` where ``rates`` is a list of ``(t, dB/dt)``
    in T/s and ``delta_B`` is the trapezoidal integral in tesla.
    """
    trace = np.asarray(voltage_trace, dtype=float)
    if trace.ndim != 2 or trace.shape[0] == 0 or trace.shape[1] != 2:
        raise InvalidArgumentError("voltage trace must be a non-empty list of (t, U) pairs")
    t, u = trace[:, 0], trace[:, 1]
    if np.any(np.diff(t) <= 0):
        raise InvalidArgumentError("voltage trace times must be strictly increasing")
    rate = -spec.chi * u / (spec.turns * spec.area)
    delta = float(np.trapezoid(rate, t)) if len(t) > 1 else 0.0
    return list(zip(t.tolist(), rate.tolist())), delta


def magnetic_force(mu_F, assembly: CoilAssembly, point, step: float = 1e-4) -> np.ndarray:
    """Force ``-(mu . grad) B`` on a magnetic moment ``mu_F`` (J/T) at ``point``."""
    mu = np.asarray(_vec3(mu_F, "mu_F"))
    grad = field_gradient(assembly, point, step)
    return -(mu @ grad)


def drift_displacement(force, mass: float, t: float) -> np.ndarray:
    """Constant-force displacement ``F t^2 / (2 m)``."""
    if t < 0:
        raise InvalidArgumentError(f"t={t} must be non-negative")
    if not mass > 0:
        raise InvalidArgumentError("mass must be positive")
    return 0.5 * np.asarray(force, dtype=float) / mass * t * t
