"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numeric or domain error,
4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import BACKEND, __version__
from .constants import CONSTANTS, GAUSS
from .errors import ConfigError, DspError
from .metrics import background_similarity, fit_field_strength, read_observations, relative_similarity, similarity
from .optics import read_image
from .scenario import (PRESETS, _AtomicDir, efficiency_model, field_map, parse_config, run_preset,
                       run_scenario)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _overrides(args) -> dict:
    ov = {}
    if getattr(args, "z_sum", None):
        ov[("optics", "z_sum")] = args.z_sum
    if getattr(args, "frames", None) is not None:
        ov[("output", "frames")] = "true" if args.frames else "false"
    return ov


def _add_run_flags(p):
    p.add_argument("--out", metavar="DIR", help="output directory (overrides [output] dir)")
    p.add_argument("--threads", type=int, default=1, metavar="N", help="worker threads over time points")
    p.add_argument("--z-sum", choices=("coherent", "incoherent"), dest="z_sum",
                   help="combine z slices coherently or incoherently")
    p.add_argument("--frames", action=argparse.BooleanOptionalAction, default=None,
                   help="write 16-bit PGM frames")


def _cmd_simulate(args) -> int:
    s = parse_config(args.config, _overrides(args))
    res = run_scenario(s, args.out, args.threads)
    out = args.out or s.outputs
    print(f"wrote {len(res.records)} time points to {out}")
    return EXIT_OK


def _cmd_preset(args) -> int:
    if args.name not in PRESETS:
        raise ConfigError(f"unknown preset {args.name!r}; choose from {', '.join(PRESETS)}")
    res = run_preset(args.name, args.out, args.threads, args.frames, _overrides(args))
    for variant, r in res.items():
        last = r.records[-1]
        print(f"{args.name}/{variant}: {len(r.records)} points, S_r(t={last.t * 1e6:g} us) = {last.S_r:.4f}")
    return EXIT_OK


def _cmd_field_map(args) -> int:
    s = parse_config(args.config)
    fm = field_map(s, args.extent_m, args.points, args.segment)
    out = Path(args.out or s.outputs)
    with _AtomicDir(out) as tmp:
        fm.write_csv(tmp / "field_map.csv")
    mags = np.linalg.norm(fm.values, axis=-1)
    print(f"wrote {mags.size} samples to {out / 'field_map.csv'}; |B| range "
          f"{mags.min() / GAUSS:.4g} .. {mags.max() / GAUSS:.4g} Gs")
    return EXIT_OK


def _cmd_fit(args) -> int:
    s = parse_config(args.config)
    obs = read_observations(args.observed)
    model, ref_B = efficiency_model(s, args.coil)
    lo, hi = (float(x) * GAUSS for x in args.bracket_gauss.split(","))
    res = fit_field_strength(obs, model, (lo, hi), args.tol_gauss * GAUSS)
    out = Path(args.out or s.outputs)
    with _AtomicDir(out) as tmp:
        (tmp / "fit.txt").write_text(res.report(), encoding="utf-8")
    sys.stdout.write(res.report())
    if res.boundary:
        print("note: minimum at the lower bracket edge (boundary solution)")
    return EXIT_OK


def _cmd_similarity(args) -> int:
    a = read_image(args.a)
    b = read_image(args.b)
    S = similarity(a, b)
    S_bg = background_similarity(b)
    print(f"S = {S:.6g}")
    print(f"S_bg = {S_bg:.6g}")
    print(f"S_r = {relative_similarity(S, S_bg):.6g}")
    return EXIT_OK


def _cmd_constants(args) -> int:
    data = CONSTANTS.as_dict()
    if args.json:
        print(json.dumps(data, indent=2, sort_keys=True))
    else:
        for k, v in data.items():
            print(f"{k} = {v!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dspimage", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND} kernels)")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="run a scenario config")
    sp.add_argument("config")
    _add_run_flags(sp)
    sp.set_defaults(func=_cmd_simulate)

    sp = sub.add_parser("preset", help="run a bundled preset")
    sp.add_argument("name", help=", ".join(PRESETS))
    _add_run_flags(sp)
    sp.set_defaults(func=_cmd_preset)

    sp = sub.add_parser("field-map", help="sample the coil field on a cube around the ensemble")
    sp.add_argument("config")
    sp.add_argument("--out", metavar="DIR")
    sp.add_argument("--extent-m", type=float, default=None, help="cube half-width (default 2 sigma)")
    sp.add_argument("--points", type=int, default=11, help="samples per axis")
    sp.add_argument("--segment", type=int, default=1, help="schedule segment to map")
    sp.set_defaults(func=_cmd_field_map)

    sp = sub.add_parser("fit", help="fit the inhomogeneous field strength to an efficiency decay")
    sp.add_argument("config")
    sp.add_argument("observed", help="CSV with t_us and efficiency columns")
    sp.add_argument("--out", metavar="DIR")
    sp.add_argument("--coil", default=None, help="coil section name to scale")
    sp.add_argument("--bracket-gauss", default="0,1", help="search interval LO,HI in gauss")
    sp.add_argument("--tol-gauss", type=float, default=1e-4, help="final bracket width in gauss")
    sp.set_defaults(func=_cmd_fit)

    sp = sub.add_parser("similarity", help="S and S_r of image A against reference B")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.set_defaults(func=_cmd_similarity)

    sp = sub.add_parser("constants", help="print the physical constants in use")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=_cmd_constants)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DspError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
