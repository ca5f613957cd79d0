"""Regression check of every preset at reduced resolution.

The stored curves come from ``scripts/regen_golden.py``; they pin behaviour,
they are not independent oracles.
"""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from dspimage.scenario import PRESETS, preset_scenarios, simulate

GOLDEN = Path(__file__).parent / "golden"
OVERRIDES = {tuple(k.split(".", 1)): v for k, v in json.loads((GOLDEN / "overrides.json").read_text()).items()}


def _read(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t_us", "S", "S_r", "efficiency"]
    return np.array(rows[1:], dtype=float)


@pytest.mark.parametrize("name", list(PRESETS))
def test_preset_matches_golden(name):
    cache = {}
    for variant, s in preset_scenarios(name, OVERRIDES):
        expected = _read(GOLDEN / f"{name}__{variant}.csv")
        res = simulate(s, 2, cache)
        got = np.array([[r.t * 1e6, r.S, r.S_r, r.efficiency] for r in res.records])
        assert got.shape == expected.shape
        # stored with six significant digits
        np.testing.assert_allclose(got, expected, rtol=2e-6, atol=2e-6, err_msg=f"{name}/{variant}")
