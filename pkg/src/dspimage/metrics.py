"""Image similarity scores and the scalar field-strength fit."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BracketError, InvalidArgumentError

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
CSV_COLUMNS = ("t_us", "S", "S_r", "efficiency")


def _image(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0 or a.size == 0:
        raise InvalidArgumentError(f"{name} is empty")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"{name} contains non-finite pixels")
    if np.any(a < 0):
        raise InvalidArgumentError(f"{name} has negative pixels")
    if not np.any(a > 0):
        raise InvalidArgumentError(f"{name} is all zero")
    return a


def similarity(A, B) -> float:
    """Cosine similarity ``sum(A B) / sqrt(sum A^2 sum B^2)`` of two intensity images."""
    A = _image(A, "first image")
    B = _image(B, "second image")
    if A.shape != B.shape:
        raise InvalidArgumentError(f"image shapes differ: {A.shape} vs {B.shape}")
    a = A.ravel()
    b = B.ravel()
    # scale each image first so the products cannot overflow or underflow
    a = a / a.max()
    b = b / b.max()
    s = float(np.dot(a, b) / math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b))))
    return min(max(s, 0.0), 1.0)


def relative_similarity(S: float, S_bg: float) -> float:
    """``(S - S_bg) / (1 - S_bg)``; requires ``S_bg < 1``."""
    if not S_bg < 1:
        raise InvalidArgumentError(f"background similarity {S_bg} must be below 1")
    return (S - S_bg) / (1.0 - S_bg)


def background_similarity(original, background=None) -> float:
    """Similarity of ``original`` to the background frame.

    The default background is a uniform gray frame; its level does not matter
    because the cosine is scale invariant. A result of 1 means the original
    is indistinguishable from the background and ``S_r`` is undefined.
    """
    original = _image(original, "original")
    if background is None:
        background = np.ones_like(original)
    return similarity(original, background)


@dataclass(frozen=True)
class SimilarityRecord:
    t: float
    S: float
    S_r: float
    efficiency: float

    def row(self) -> list[str]:
        return [f"{self.t * 1e6:.6g}", f"{self.S:.6g}", f"{self.S_r:.6g}", f"{self.efficiency:.6g}"]


def score(image, reference, t: float, efficiency: float, background=None) -> SimilarityRecord:
    """Score a retrieved intensity image against the reference frame."""
    S_bg = background_similarity(reference, background)
    if S_bg >= 1:
        raise InvalidArgumentError("reference frame is uniform, relative similarity is undefined")
    S = similarity(image, reference)
    return SimilarityRecord(float(t), S, relative_similarity(S, S_bg), float(efficiency))


def write_curve_csv(path, records: Sequence[SimilarityRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(r.row())


def read_observations(path) -> list[tuple[float, float]]:
    """``(t [s], efficiency)`` pairs from a CSV with ``t_us`` and ``efficiency`` columns."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"t_us", "efficiency"} <= set(reader.fieldnames):
            raise InvalidArgumentError(f"{path}: needs t_us and efficiency columns")
        out = []
        for k, row in enumerate(reader, start=2):
            try:
                out.append((float(row["t_us"]) * 1e-6, float(row["efficiency"])))
            except (TypeError, ValueError) as exc:
                raise InvalidArgumentError(f"{path}: line {k}: {exc}") from None
    return out


@dataclass
class FitResult:
    """Golden-section fit outcome.

    ``trace`` holds the bracket ``(lo, hi)`` after every iteration.
    """

    B: float
    residual: float
    iterations: int
    boundary: bool = False
    trace: list[tuple[float, float]] = field(default_factory=list, repr=False)

    def report(self) -> str:
        return (
            f"fitted_B_T = {self.B:.9g}\n"
            f"residual = {self.residual:.9g}\n"
            f"iterations = {self.iterations}\n"
            f"boundary = {str(self.boundary).lower()}\n"
        )


def golden_iterations(lo: float, hi: float, tol: float) -> int:
    """Iterations needed to shrink ``[lo, hi]`` below ``tol``."""
    if hi - lo <= tol:
        return 0
    return math.ceil(math.log((hi - lo) / tol) / math.log(1.0 / INV_PHI))


def fit_field_strength(observed: Sequence[tuple[float, float]], forward_model: Callable,
                       bracket: tuple[float, float], tol: float) -> FitResult:
    """Least-squares field strength by golden-section search.

    Parameters
    ----------
    observed : sequence of (t, efficiency)
        At least five observations.
    forward_model : callable
        ``forward_model(B, times) -> efficiencies``; must be deterministic.
    bracket : (B_lo, B_hi)
        Search interval in tesla.
    tol : float
        Final bracket width in tesla.

    Returns
    -------
    FitResult
        A minimum at ``B_lo`` is returned with ``boundary=True``; one at
        ``B_hi`` raises :class:`BracketError` since the true minimum may lie
        beyond the bracket.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise InvalidArgumentError(f"invalid bracket [{lo}, {hi}]")
    if not tol > 0:
        raise InvalidArgumentError("tol must be positive")
    if len(observed) < 5:
        raise InvalidArgumentError(f"need at least 5 observations, got {len(observed)}")
    times = np.array([t for t, _ in observed], dtype=float)
    obs = np.array([e for _, e in observed], dtype=float)

    def cost(B):
        pred = np.asarray(forward_model(B, times), dtype=float)
        return float(np.sum((pred - obs) ** 2))

    f_lo, f_hi = cost(lo), cost(hi)
    n_iter = golden_iterations(lo, hi, tol)
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = cost(c), cost(d)
    trace = []
    for _ in range(n_iter):
        # ties go to the lower interval so the search is deterministic
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = cost(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = cost(d)
        trace.append((a, b))
    best = 0.5 * (a + b)
    f_best = cost(best)
    if b - lo <= tol * (1 + 1e-9) and f_lo <= f_best:
        return FitResult(lo, f_lo, n_iter, True, trace)
    if hi - a <= tol * (1 + 1e-9) and f_hi <= f_best:
        exc = BracketError(f"objective decreases towards the upper bracket edge B_hi={hi:g} T "
                           f"(cost {f_lo:.3g} at B_lo, {f_hi:.3g} at B_hi)")
        exc.lo, exc.hi, exc.f_lo, exc.f_hi = lo, hi, f_lo, f_hi
        raise exc
    return FitResult(best, f_best, n_iter, False, trace)
