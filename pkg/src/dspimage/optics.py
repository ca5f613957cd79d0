"""Sampled optical fields, pattern generation and Fourier-optics transforms.

Grids are square with ``N`` a power of two; pixel ``i`` sits at
``(i - N/2) * pitch`` so the optical axis is pixel ``N/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .constants import CONSTANTS
from .errors import InvalidArgumentError

PLANES = ("object", "fourier", "image")
BUILTIN_PATTERNS = ("disk", "ring", "three_bar", "letter_mask")


@dataclass(frozen=True)
class ComplexField2D:
    samples: np.ndarray = field(repr=False)
    pitch: float
    plane: str = "object"

    def __post_init__(self):
        a = np.asarray(self.samples, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidArgumentError(f"field must be square, got shape {a.shape}")
        n = a.shape[0]
        if n < 2 or n & (n - 1):
            raise InvalidArgumentError(f"grid size {n} is not a power of two")
        if not self.pitch > 0:
            raise InvalidArgumentError(f"pitch must be positive, got {self.pitch}")
        if self.plane not in PLANES:
            raise InvalidArgumentError(f"unknown plane tag {self.plane!r}")
        object.__setattr__(self, "samples", a)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.samples) ** 2

    @property
    def energy(self) -> float:
        return float(np.sum(self.intensity) * self.pitch ** 2)

    def coords(self) -> np.ndarray:
        return (np.arange(self.n) - self.n // 2) * self.pitch


def grid_coords(n: int, pitch: float) -> np.ndarray:
    return (np.arange(n) - n // 2) * pitch


def fourier_pitch(n: int, pitch: float, wavelength: float, focal_length: float) -> float:
    """Sample spacing in the back focal plane, ``lambda f / (N pitch)``."""
    return wavelength * focal_length / (n * pitch)


def point_invert(a: np.ndarray) -> np.ndarray:
    """``u(x, y) -> u(-x, -y)`` on a centred grid (the edge row maps onto itself)."""
    return np.roll(a[::-1, ::-1], 1, axis=(0, 1))


@dataclass(frozen=True)
class PatternSpec:
    source: str
    physical_diameter: float = 1.6e-3
    scale_factor: float = 1.0

    def __post_init__(self):
        if not self.physical_diameter > 0:
            raise InvalidArgumentError("pattern diameter must be positive")
        if not 0 < self.scale_factor <= 4:
            raise InvalidArgumentError(f"scale_factor {self.scale_factor} outside (0, 4]")

    @property
    def diameter(self) -> float:
        return self.physical_diameter * self.scale_factor

    @property
    def is_builtin(self) -> bool:
        return self.source in BUILTIN_PATTERNS


def _builtin_intensity(name: str, X: np.ndarray, Y: np.ndarray, d: float) -> np.ndarray:
    # coordinates are normalised to the pattern diameter
    u, v = X / d, Y / d
    r = np.hypot(u, v)
    if name == "disk":
        return (r <= 0.5).astype(float)
    if name == "ring":
        return ((r <= 0.5) & (r >= 0.3)).astype(float)
    if name == "three_bar":
        # three vertical bars of width 1/5 separated by equal gaps
        inside = (np.abs(u) <= 0.5) & (np.abs(v) <= 0.5)
        k = np.floor((u + 0.5) * 5)
        return (inside & (k % 2 == 0)).astype(float)
    if name == "letter_mask":
        # an "F": stem plus two arms, deliberately without point symmetry
        stem = (u >= -0.35) & (u <= -0.15) & (np.abs(v) <= 0.5)
        top = (u >= -0.35) & (u <= 0.35) & (v >= 0.3) & (v <= 0.5)
        mid = (u >= -0.35) & (u <= 0.2) & (v >= -0.1) & (v <= 0.1)
        return (stem | top | mid).astype(float)
    raise InvalidArgumentError(f"unknown builtin pattern {name!r}")


def builtin_image(name: str, pixels: int = 256) -> np.ndarray:
    """Rasterise a builtin pattern filling a ``pixels`` square (for bundling as a file)."""
    c = (np.arange(pixels) + 0.5) / pixels - 0.5
    # rows run top to bottom in image files, so y decreases with row index
    X, Y = np.meshgrid(c, -c, indexing="xy")
    return _builtin_intensity(name, X, Y, 1.0)


def read_image(path) -> np.ndarray:
    """Single-channel intensity from PGM (8/16 bit) or PNG, scaled to [0, 1]."""
    from PIL import Image

    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64)
                full = 65535.0
            elif im.mode in ("L", "P", "1"):
                arr = np.asarray(im.convert("L"), dtype=np.float64)
                full = 255.0
            else:
                raise InvalidArgumentError(f"{path}: expected a single-channel image, got mode {im.mode}")
    except (OSError, SyntaxError) as exc:
        raise OSError(f"cannot read pattern image {path}: {exc}") from exc
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{path}: expected a single-channel image")
    if Path(path).suffix.lower() == ".pgm":
        maxval = _pgm_maxval(path)
        if maxval:
            full = float(maxval)
    return arr / full


def _pgm_maxval(path) -> int | None:
    with open(path, "rb") as fh:
        head = fh.read(64)
    tokens = []
    for line in head.split(b"\n"):
        line = line.split(b"#")[0]
        tokens.extend(line.split())
        if len(tokens) >= 4:
            break
    try:
        return int(tokens[3])
    except (IndexError, ValueError):
        return None


def write_pgm16(path, intensity: np.ndarray) -> None:
    """16-bit binary PGM; values are clipped to [0, 1] and scaled to 65535."""
    a = np.clip(np.asarray(intensity, dtype=float), 0.0, 1.0)
    data = np.round(a * 65535).astype(">u2")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def write_pgm8(path, intensity: np.ndarray) -> None:
    a = np.clip(np.asarray(intensity, dtype=float), 0.0, 1.0)
    data = np.round(a * 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _place_image(img: np.ndarray, n: int, pitch: float, diameter: float) -> np.ndarray:
    # longer image side spans `diameter`; bilinear sampling at grid pixel centres
    h, w = img.shape
    px = diameter / max(h, w)
    c = grid_coords(n, pitch)
    X, Y = np.meshgrid(c, c, indexing="xy")
    col = X / px + (w - 1) / 2
    row = -Y / px + (h - 1) / 2
    out = ndimage.map_coordinates(img, [row.ravel(), col.ravel()], order=1, mode="constant", cval=0.0)
    return out.reshape(n, n)


def load_pattern(spec: PatternSpec, n: int = 256, pitch: float = 12.5e-6) -> ComplexField2D:
    """Object-plane amplitude ``sqrt(intensity)`` with flat phase and unit peak.

    Array index ``[row, col]`` maps to ``(y, x)``, both centred.
    """
    if n < 2 or n & (n - 1):
        raise InvalidArgumentError(f"grid size {n} is not a power of two")
    extent = n * pitch
    d = spec.diameter
    if d > extent:
        raise InvalidArgumentError(f"pattern diameter {d:.3e} m exceeds grid extent {extent:.3e} m")
    if spec.is_builtin:
        c = grid_coords(n, pitch)
        X, Y = np.meshgrid(c, c, indexing="xy")
        inten = _builtin_intensity(spec.source, X, Y, d)
    else:
        img = read_image(spec.source)
        inten = _place_image(img, n, pitch, d)
    inten = np.clip(inten, 0.0, None)
    peak = inten.max()
    if peak <= 0:
        raise InvalidArgumentError(f"pattern {spec.source!r} has no bright pixels on the grid")
    return ComplexField2D(np.sqrt(inten / peak).astype(complex), pitch, "object")


def resample(u: ComplexField2D, factor: float) -> ComplexField2D:
    """Magnify the field about the optical axis by ``factor`` (bilinear, same grid)."""
    if not factor > 0:
        raise InvalidArgumentError("resample factor must be positive")
    n = u.n
    idx = np.arange(n) - n // 2
    R, C = np.meshgrid(idx, idx, indexing="ij")
    coords = [R.ravel() / factor + n // 2, C.ravel() / factor + n // 2]
    re = ndimage.map_coordinates(u.samples.real, coords, order=1, mode="constant")
    im = ndimage.map_coordinates(u.samples.imag, coords, order=1, mode="constant")
    return replace(u, samples=(re + 1j * im).reshape(n, n))


def _centered_fft(a: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(a), norm="ortho"))


def fraunhofer(u_o: ComplexField2D, wavelength: float, focal_length: float) -> ComplexField2D:
    """Back-focal-plane field of a lens: a centred, energy-preserving DFT.

    The output pitch is ``lambda f / (N pitch_in)``; amplitudes are rescaled so
    ``sum |u|^2 pitch^2`` is unchanged. Constant prefactors such as ``1/i``
    are dropped.
    """
    if u_o.plane != "object":
        raise InvalidArgumentError(f"fraunhofer expects an object-plane field, got {u_o.plane!r}")
    return _lens(u_o, wavelength, focal_length, "fourier")


def retrieve(u_f: ComplexField2D, wavelength: float, focal_length: float) -> ComplexField2D:
    """Second lens of the 4f system; the image is point-inverted."""
    if u_f.plane != "fourier":
        raise InvalidArgumentError(f"retrieve expects a Fourier-plane field, got {u_f.plane!r}")
    return _lens(u_f, wavelength, focal_length, "image")


def _lens(u: ComplexField2D, wavelength, focal_length, plane) -> ComplexField2D:
    if not (wavelength > 0 and focal_length > 0):
        raise InvalidArgumentError("wavelength and focal length must be positive")
    pitch_out = fourier_pitch(u.n, u.pitch, wavelength, focal_length)
    out = _centered_fft(u.samples) * (u.pitch / pitch_out)
    return ComplexField2D(out, pitch_out, plane)


def thermal_speed(temperature: float, mass: float = CONSTANTS.m_atom) -> float:
    """Most probable speed ``sqrt(2 k_B T / m)``."""
    if not temperature > 0:
        raise InvalidArgumentError("temperature must be positive")
    return math.sqrt(2 * CONSTANTS.k_B * temperature / mass)


def blur_radius(t: float, mode: str = "ballistic", temperature: float | None = None,
                mass: float = CONSTANTS.m_atom, D_coeff: float | None = None,
                velocity: float | None = None) -> float:
    """1/e radius of the motion kernel after time ``t``."""
    if t < 0:
        raise InvalidArgumentError(f"t={t} must be non-negative")
    if mode == "ballistic":
        v = velocity if velocity is not None else thermal_speed(temperature if temperature else -1.0, mass)
        return v * t
    if mode == "diffusive":
        if D_coeff is None or D_coeff < 0:
            raise InvalidArgumentError("diffusive blur needs a non-negative D_coeff")
        return math.sqrt(4 * D_coeff * t)
    raise InvalidArgumentError(f"unknown blur mode {mode!r}")


def gaussian_blur(u: ComplexField2D, radius: float) -> ComplexField2D:
    """Convolve the complex amplitude with a unit-sum Gaussian ``exp(-r^2/radius^2)``.

    Applied by multiplication with the analytic transfer function on a grid
    zero-padded by ``N/4`` on every side, then cropped.
    """
    if radius < 0:
        raise InvalidArgumentError("blur radius must be non-negative")
    if radius == 0:
        return u
    n = u.n
    pad = n // 4
    m = n + 2 * pad
    a = np.pad(u.samples, pad)
    f = np.fft.fftfreq(m, d=u.pitch)
    H = np.exp(-(math.pi * radius) ** 2 * (f[:, None] ** 2 + f[None, :] ** 2))
    out = np.fft.ifft2(np.fft.fft2(a) * H)[pad:pad + n, pad:pad + n]
    return replace(u, samples=out)


def motion_blur(u: ComplexField2D, temperature: float | None, mass: float, t: float,
                mode: str = "ballistic", D_coeff: float | None = None,
                velocity: float | None = None) -> ComplexField2D:
    """Atomic-motion blur of a stored amplitude after storage time ``t``.

    Ballistic: radius ``v_p t`` with ``v_p = sqrt(2 k_B T / m)`` (or an
    explicit ``velocity``). Diffusive: radius ``sqrt(4 D t)``.
    """
    if t < 0:
        raise InvalidArgumentError(f"t={t} must be non-negative")
    if t == 0:
        return u
    return gaussian_blur(u, blur_radius(t, mode, temperature, mass, D_coeff, velocity))
