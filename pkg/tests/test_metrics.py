import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dspimage.errors import BracketError, InvalidArgumentError
from dspimage.metrics import (CSV_COLUMNS, INV_PHI, SimilarityRecord, background_similarity, fit_field_strength,
                              golden_iterations, read_observations, relative_similarity, score, similarity,
                              write_curve_csv)
from dspimage.optics import PatternSpec, load_pattern

images = arrays(float, (6, 5), elements=st.floats(0, 1e3, allow_nan=False))


def test_similarity_examples():
    a = np.arange(12.0).reshape(3, 4)
    assert similarity(a, a) == pytest.approx(1.0, abs=1e-15)
    assert similarity(a, 2 * a) == pytest.approx(1.0, abs=1e-15)
    left = np.zeros((4, 4))
    left[:, :2] = 1
    assert similarity(left, 1 - left) == 0.0


def test_similarity_errors():
    with pytest.raises(InvalidArgumentError):
        similarity(np.ones((2, 2)), np.ones((3, 3)))
    with pytest.raises(InvalidArgumentError):
        similarity(np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(InvalidArgumentError):
        similarity(-np.ones((2, 2)), np.ones((2, 2)))
    with pytest.raises(InvalidArgumentError):
        similarity(np.full((2, 2), np.nan), np.ones((2, 2)))


def test_similarity_tiny_and_huge_values():
    a = np.array([[1e-300, 0.0], [2e-300, 1e-300]])
    assert similarity(a, a) == pytest.approx(1.0)
    assert similarity(a * 1e300 * 1e300, a) == pytest.approx(1.0)


@given(images, images)
def test_similarity_symmetric_and_bounded(a, b):
    if not (a.any() and b.any()):
        return
    s = similarity(a, b)
    assert s == similarity(b, a)
    assert 0.0 <= s <= 1.0


@given(images, images, st.randoms(use_true_random=False))
def test_similarity_permutation_invariant(a, b, rnd):
    if not (a.any() and b.any()):
        return
    perm = list(range(a.size))
    rnd.shuffle(perm)
    pa, pb = a.ravel()[perm], b.ravel()[perm]
    assert similarity(pa, pb) == pytest.approx(similarity(a, b), abs=1e-14)


def test_relative_similarity():
    assert relative_similarity(1.0, 0.3) == 1.0
    assert relative_similarity(0.3, 0.3) == 0.0
    assert relative_similarity(0.75, 0.5) == 0.5
    with pytest.raises(InvalidArgumentError):
        relative_similarity(0.9, 1.0)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.99))
def test_relative_similarity_increasing(s1, s2, bg):
    r1, r2 = relative_similarity(s1, bg), relative_similarity(s2, bg)
    if s1 <= s2:
        assert r1 <= r2
    # strictly increasing wherever the step is resolvable in double precision
    if s2 - s1 > 1e-12:
        assert r1 < r2


def test_background_similarity_of_disk_is_sqrt_area():
    u = load_pattern(PatternSpec("disk", 1.6e-3), 256, 12.5e-6)
    inten = u.intensity
    frac = np.count_nonzero(inten) / inten.size
    assert background_similarity(inten) == pytest.approx(math.sqrt(frac), rel=1e-12)
    assert background_similarity(np.ones((4, 4))) == pytest.approx(1.0)
    assert background_similarity(inten, inten) == pytest.approx(1.0)


def test_score_and_csv(tmp_path):
    ref = np.zeros((4, 4))
    ref[1:3, 1:3] = 1.0
    rec = score(ref * 3, ref, 2.5e-6, 0.42)
    assert rec.S == pytest.approx(1.0) and rec.S_r == pytest.approx(1.0)
    with pytest.raises(InvalidArgumentError):
        score(ref, np.ones((4, 4)), 0.0, 1.0)
    path = tmp_path / "c.csv"
    write_curve_csv(path, [rec, SimilarityRecord(1e-6, 0.123456789, -0.5, 1 / 3)])
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[2] == "1,0.123457,-0.5,0.333333"
    obs = read_observations(path)
    assert obs[1] == (pytest.approx(1e-6), pytest.approx(0.333333))


def test_read_observations_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,eta\n1,2\n")
    with pytest.raises(InvalidArgumentError):
        read_observations(p)
    p.write_text("t_us,efficiency\n1,abc\n")
    with pytest.raises(InvalidArgumentError, match="line 2"):
        read_observations(p)


def _decay(B, times):
    return np.exp(-(B * 1e4 * np.asarray(times) / 2e-6) ** 2)


TIMES = np.linspace(0.5e-6, 6e-6, 12)


def test_golden_iterations_formula():
    assert golden_iterations(0, 1, 1e-4) == math.ceil(math.log(1e4) / math.log(1 / INV_PHI))
    assert golden_iterations(0, 1, 2.0) == 0


def test_fit_noiseless_round_trip_and_trace():
    obs = list(zip(TIMES, _decay(0.05e-4, TIMES)))
    res = fit_field_strength(obs, _decay, (0.0, 1e-4), 1e-9)
    assert res.B == pytest.approx(0.05e-4, rel=1e-3)
    assert not res.boundary
    assert res.iterations == golden_iterations(0.0, 1e-4, 1e-9) == len(res.trace)
    widths = [hi - lo for lo, hi in [(0.0, 1e-4)] + res.trace]
    for w0, w1 in zip(widths, widths[1:]):
        assert w1 == pytest.approx(w0 * INV_PHI, rel=1e-9)
    assert widths[-1] < 1e-9
    report = res.report()
    assert report.startswith("fitted_B_T = ") and "iterations = " in report


def test_fit_boundary_and_bracket_error():
    flat = [(t, 1.0) for t in TIMES]
    res = fit_field_strength(flat, _decay, (0.0, 1e-4), 1e-8)
    assert res.boundary and res.B == 0.0
    dead = [(t, 0.0) for t in TIMES]
    with pytest.raises(BracketError) as info:
        fit_field_strength(dead, _decay, (0.0, 0.01e-4), 1e-9)
    assert info.value.hi == 0.01e-4 and info.value.f_hi < info.value.f_lo


def test_fit_argument_errors():
    obs = list(zip(TIMES, _decay(0.05e-4, TIMES)))
    with pytest.raises(InvalidArgumentError):
        fit_field_strength(obs[:4], _decay, (0.0, 1e-4), 1e-8)
    with pytest.raises(InvalidArgumentError):
        fit_field_strength(obs, _decay, (1e-4, 0.0), 1e-8)
    with pytest.raises(InvalidArgumentError):
        fit_field_strength(obs, _decay, (0.0, 1e-4), 0.0)


def test_fit_is_deterministic():
    obs = list(zip(TIMES, _decay(0.07e-4, TIMES)))
    a = fit_field_strength(obs, _decay, (0.0, 1e-4), 1e-9)
    b = fit_field_strength(obs, _decay, (0.0, 1e-4), 1e-9)
    assert a.B == b.B and a.trace == b.trace
