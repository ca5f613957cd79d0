"""Regenerate the reduced-resolution preset curves in ``tests/golden``.

Each preset runs on a 32 x 32 grid with 3 z-slices; the overrides are stored
alongside the curves so the test replays exactly the same inputs.
"""

import json
import tempfile
from pathlib import Path

from dspimage.scenario import PRESETS, run_preset

OVERRIDES = {
    "optics.grid": "32",
    "optics.pitch_m": "100e-6",
    "ensemble.n_z": "3",
}


def as_keys(flat):
    return {tuple(k.split(".", 1)): v for k, v in flat.items()}


def main():
    golden = Path(__file__).resolve().parents[1] / "tests" / "golden"
    golden.mkdir(exist_ok=True)
    (golden / "overrides.json").write_text(json.dumps(OVERRIDES, indent=2) + "\n")
    for name in PRESETS:
        with tempfile.TemporaryDirectory() as tmp:
            results = run_preset(name, Path(tmp) / name, threads=4, frames=False, overrides=as_keys(OVERRIDES))
            for variant in results:
                src = Path(tmp) / name / variant / "curve.csv"
                dest = golden / f"{name}__{variant}.csv"
                dest.write_text(src.read_text())
                print(dest)


if __name__ == "__main__":
    main()
