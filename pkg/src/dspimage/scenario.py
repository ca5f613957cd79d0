"""Scenario configuration files, the run pipeline and the bundled presets.

Config files are line oriented::

    [section]
    key = value   # comment

Dimensioned keys carry a unit suffix (``sigma_m``, ``bias_field_gauss``,
``segment_1_duration_us`` ...); values are converted to SI on parse. Unknown
keys are rejected with the offending line number.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .constants import CONSTANTS, GAUSS, RB_D1_WAVELENGTH, US
from .errors import ConfigError, DspError, InvalidArgumentError
from .fields import CoilAssembly, FieldMap, calibrate_current, coil_pair, CoilLoop
from .metrics import SimilarityRecord, background_similarity, score, write_curve_csv
from .optics import BUILTIN_PATTERNS, PatternSpec, fraunhofer, load_pattern, write_pgm16
from .spinwave import (PZ_MODELS, Z_SUM_MODES, BlurSpec, EnsembleConfig, PatternMemory,
                       sp_populations, uniform_populations)

SECTIONS = ("pattern", "ensemble", "optics", "schedule", "times", "output")
BLUR_MODES = ("none", "ballistic", "diffusive")
COIL_KINDS = ("anti_helmholtz", "helmholtz", "loop")

# unit suffix -> (quantity kind, divisor to SI); dividing keeps 800 us == 8e-4 s exactly
UNITS = {
    "m": ("length", 1.0),
    "s": ("time", 1.0),
    "us": ("time", 1.0 / US),
    "gauss": ("field", 1.0 / GAUSS),
    "tesla": ("field", 1.0),
    "k": ("temperature", 1.0),
    "a": ("current", 1.0),
    "m_per_s": ("speed", 1.0),
    "m2_per_s": ("diffusivity", 1.0),
}
# suffixes tried longest first so ``_m_per_s`` is not read as ``_s``
_SUFFIXES = sorted(UNITS, key=len, reverse=True)

# section -> key base -> quantity kind (dimensioned) or value type (plain)
_SCHEMA = {
    "pattern": {"source": "str", "diameter": "length", "scale_factor": "float"},
    "ensemble": {
        "sigma": "length", "r_a": "length", "n_z": "int", "populations": "str",
        "sp_efficiency": "float", "fg": "half", "fs": "half", "fe": "half", "alpha": "int",
        "beta": "int", "pz_model": "str", "g_g": "float", "g_s": "float",
    },
    "optics": {
        "grid": "int", "pitch": "length", "wavelength": "length", "focal_length": "length",
        "z_sum": "str", "blur": "str", "temperature": "temperature", "velocity": "speed",
        "d_coeff": "diffusivity",
    },
    "coils": {
        "kind": "str", "radius": "length", "separation": "length", "turns": "int", "current": "current",
        "axis": "vec", "center": "length_vec", "segments": "int", "calibrate_average": "field",
    },
    "schedule": {"bias_field": "field", "bias_direction": "vec"},
    "times": {
        "values": "time_list", "start": "time", "stop": "time", "step": "time",
        "log_start": "time", "log_stop": "time", "log_count": "int",
        "refine_start": "time", "refine_stop": "time", "refine_step": "time",
    },
    "output": {"dir": "str", "frames": "bool", "seed": "int"},
}
_DIMENSIONED = {"length", "time", "field", "temperature", "current", "speed", "diffusivity",
                "length_vec", "time_list"}
_KIND_OF = {"length_vec": "length", "time_list": "time"}
_SEGMENT_RE = re.compile(r"^segment_(\d+)_(duration|coils)$")


@dataclass(frozen=True)
class CoilSpec:
    """A named coil or coil pair in a scenario."""

    name: str
    kind: str = "anti_helmholtz"
    radius: float = 0.1
    separation: float = 0.15
    turns: int = 50
    current: float = 1.0
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    segments: int = 720

    def build(self) -> CoilAssembly:
        if self.kind == "loop":
            return CoilAssembly((CoilLoop(self.center, self.axis, self.radius, self.current,
                                          self.turns, self.segments),))
        return coil_pair(self.radius, self.separation, self.turns, self.current,
                         anti=self.kind == "anti_helmholtz", axis=self.axis, center=self.center,
                         segments=self.segments)


@dataclass(frozen=True)
class ScheduleSegment:
    duration: float
    coils: tuple[str, ...]


@dataclass(frozen=True)
class OpticsConfig:
    grid: int = 256
    pitch: float = 12.5e-6
    wavelength: float = RB_D1_WAVELENGTH
    focal_length: float = 0.5


@dataclass(frozen=True)
class Scenario:
    """Everything needed for one run; all quantities in SI units."""

    pattern: PatternSpec
    ensemble: EnsembleConfig
    optics: OpticsConfig
    coils: tuple[CoilSpec, ...]
    schedule: tuple[ScheduleSegment, ...]
    bias: tuple[float, float, float]
    times: tuple[float, ...]
    z_sum: str = "coherent"
    blur: BlurSpec | None = None
    outputs: str = "out"
    frames: bool = True
    seed: int = 0

    @property
    def field_schedule(self) -> list[tuple[CoilAssembly, float]]:
        built = {c.name: c.build() for c in self.coils}
        out = []
        for seg in self.schedule:
            asm = CoilAssembly((), self.bias)
            for name in seg.coils:
                asm = asm + built[name]
            out.append((asm, seg.duration))
        return out


# ---------------------------------------------------------------- parsing


def _raw_sections(text: str) -> dict[str, dict[str, tuple[str, int]]]:
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            current = line[1:-1].strip()
            base = current.split(".", 1)[0]
            if base not in SECTIONS and not (base == "coils" and re.fullmatch(r"coils\.\w+", current)):
                raise ConfigError(f"unknown section [{current}]", lineno)
            if current in sections:
                raise ConfigError(f"duplicate section [{current}]", lineno)
            sections[current] = {}
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if current is None:
            raise ConfigError("key outside of any section", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", key):
            raise ConfigError(f"invalid key {key!r}", lineno, key)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r}", lineno, key)
        sections[current][key] = (value, lineno)
    return sections


def _split_key(section: str, key: str, lineno: int):
    """Resolve ``key`` to ``(base, kind, si_divisor)``."""
    schema = _SCHEMA["coils" if section.startswith("coils.") else section]
    key_l = key.lower()
    if section == "schedule":
        m = re.match(r"^(segment_\d+_(?:duration|coils))(?:_(\w+))?$", key_l)
        if m:
            base, suf = m.group(1), m.group(2)
            schema = {base: "str" if base.endswith("coils") else "time"}
    if key_l in schema and schema[key_l] not in _DIMENSIONED:
        return key_l, schema[key_l], None
    for suf in _SUFFIXES:
        if key_l.endswith("_" + suf):
            base = key_l[: -len(suf) - 1]
            kind = schema.get(base)
            if kind in _DIMENSIONED and _KIND_OF.get(kind, kind) == UNITS[suf][0]:
                return base, kind, UNITS[suf][1]
            if kind in _DIMENSIONED:
                raise ConfigError(f"unit '_{suf}' does not fit {base!r} ({_KIND_OF.get(kind, kind)})",
                                  lineno, key)
    if key_l in schema:
        raise ConfigError(f"dimensioned key {key!r} needs a unit suffix", lineno, key)
    raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, key)


def _convert(value: str, kind: str, factor, key: str, lineno: int):
    try:
        if kind == "str":
            if not value:
                raise ValueError("empty value")
            return value
        if kind == "int":
            f = float(value)
            if f != int(f):
                raise ValueError("not an integer")
            return int(f)
        if kind == "half":
            f = float(value)
            if 2 * f != int(2 * f):
                raise ValueError("not a multiple of 1/2")
            return int(f) if f == int(f) else f
        if kind == "float":
            return float(value)
        if kind == "bool":
            v = value.lower()
            if v in ("true", "yes", "1", "on"):
                return True
            if v in ("false", "no", "0", "off"):
                return False
            raise ValueError("expected true or false")
        if kind == "vec":
            parts = [float(p) for p in value.split(",")]
            if len(parts) != 3:
                raise ValueError("expected three comma-separated numbers")
            return tuple(parts)
        if kind == "length_vec":
            parts = [float(p) / factor for p in value.split(",")]
            if len(parts) != 3:
                raise ValueError("expected three comma-separated numbers")
            return tuple(parts)
        if kind == "time_list":
            return tuple(float(p) / factor for p in value.split(",") if p.strip())
        f = float(value) / factor
        if not math.isfinite(f):
            raise ValueError("not finite")
        return f
    except ValueError as exc:
        raise ConfigError(f"bad value {value!r} for {key!r}: {exc}", lineno, key) from None


def _resolve(sections) -> dict[str, dict[str, tuple[object, int, str]]]:
    out: dict[str, dict[str, tuple[object, int, str]]] = {}
    for section, items in sections.items():
        res = {}
        for key, (value, lineno) in items.items():
            base, kind, factor = _split_key(section, key, lineno)
            if base in res:
                raise ConfigError(f"{key!r} duplicates {res[base][2]!r}", lineno, key)
            res[base] = (_convert(value, kind, factor, key, lineno), lineno, key)
        out[section] = res
    return out


def _times(sec) -> tuple[float, ...]:
    def get(k):
        return sec[k][0] if k in sec else None

    pts: list[float] = list(get("values") or ())
    for prefix in ("", "refine_"):
        start, stop, step = get(prefix + "start"), get(prefix + "stop"), get(prefix + "step")
        if start is None and stop is None and step is None:
            continue
        if None in (start, stop, step) or not step > 0 or stop < start:
            line = next(sec[k][1] for k in (prefix + "start", prefix + "stop", prefix + "step") if k in sec)
            raise ConfigError(f"{prefix}start/stop/step must all be given with step > 0 and stop >= start", line)
        n = int(math.floor((stop - start) / step * (1 + 1e-12))) + 1
        pts.extend(round(start + k * step, 15) for k in range(n))
    lo, hi, cnt = get("log_start"), get("log_stop"), get("log_count")
    if lo is not None or hi is not None or cnt is not None:
        if None in (lo, hi, cnt) or not (0 < lo < hi) or cnt < 2:
            line = next(sec[k][1] for k in ("log_start", "log_stop", "log_count") if k in sec)
            raise ConfigError("log_start/log_stop/log_count need 0 < start < stop and count >= 2", line)
        pts.extend(round(t, 15) for t in np.geomspace(lo, hi, cnt).tolist())
    if not pts:
        raise ConfigError("[times] defines no time points")
    # merge points closer than a picosecond
    out: list[float] = []
    for t in sorted(pts):
        if t < 0:
            raise ConfigError(f"negative time {t} s")
        if not out or t - out[-1] > 1e-12:
            out.append(float(t))
    return tuple(out)


def _populations(sec, Fg, lineno_default):
    spec = sec.get("populations", ("uniform", lineno_default, "populations"))
    value, lineno, _ = spec
    eff = sec.get("sp_efficiency", (0.7, lineno, ""))[0]
    if value == "uniform":
        return uniform_populations(Fg)
    if value == "sp":
        return sp_populations(Fg, eff)
    try:
        pops = tuple(float(p) for p in value.split(","))
    except ValueError:
        raise ConfigError(f"populations must be 'uniform', 'sp' or a comma list, got {value!r}",
                          lineno, "populations") from None
    return pops


def scenario_from_text(text: str, base_dir: str | os.PathLike = ".",
                       overrides: dict[tuple[str, str], str] | None = None) -> Scenario:
    """Build a :class:`Scenario` from config text.

    ``overrides`` maps ``(section, key)`` to a raw value string and is applied
    before interpretation (used by preset variants and command-line flags).
    """
    sections = _raw_sections(text)
    for (sec, key), value in (overrides or {}).items():
        sections.setdefault(sec, {})[key] = (value, None)
    for sec in list(sections):
        if sec.startswith("coils."):
            continue
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
    r = _resolve(sections)
    base_dir = Path(base_dir)

    def val(sec, key, default):
        return r.get(sec, {}).get(key, (default,))[0]

    def line(sec, key):
        return r.get(sec, {}).get(key, (None, None))[1]

    try:
        # pattern
        source = val("pattern", "source", "three_bar")
        if source not in BUILTIN_PATTERNS:
            path = Path(source)
            if not path.is_absolute():
                path = base_dir / path
            if not path.is_file():
                raise ConfigError(f"pattern file {str(path)!r} does not exist", line("pattern", "source"),
                                  "source")
            source = str(path.resolve())
        pattern = PatternSpec(source, val("pattern", "diameter", 1.6e-3), val("pattern", "scale_factor", 1.0))

        # ensemble
        es = r.get("ensemble", {})
        Fg = val("ensemble", "fg", 2)
        pz = val("ensemble", "pz_model", "gaussian")
        if pz not in PZ_MODELS:
            raise ConfigError(f"pz_model must be one of {PZ_MODELS}", line("ensemble", "pz_model"), "pz_model")
        ensemble = EnsembleConfig(
            sigma=val("ensemble", "sigma", 1e-3), r_a=val("ensemble", "r_a", None),
            n_z=val("ensemble", "n_z", 21), populations=_populations(es, Fg, line("ensemble", "populations")),
            Fg=Fg, Fs=val("ensemble", "fs", 3), Fe=val("ensemble", "fe", 3),
            alpha=val("ensemble", "alpha", 1), beta=val("ensemble", "beta", -1), pz_model=pz,
            g_g=val("ensemble", "g_g", None), g_s=val("ensemble", "g_s", None),
        )

        # optics
        optics = OpticsConfig(val("optics", "grid", 256), val("optics", "pitch", 12.5e-6),
                              val("optics", "wavelength", RB_D1_WAVELENGTH),
                              val("optics", "focal_length", 0.5))
        z_sum = val("optics", "z_sum", "coherent")
        if z_sum not in Z_SUM_MODES:
            raise ConfigError(f"z_sum must be one of {Z_SUM_MODES}", line("optics", "z_sum"), "z_sum")
        blur_mode = val("optics", "blur", "none")
        if blur_mode not in BLUR_MODES:
            raise ConfigError(f"blur must be one of {BLUR_MODES}", line("optics", "blur"), "blur")
        blur = None
        if blur_mode != "none":
            blur = BlurSpec(blur_mode, val("optics", "temperature", 200e-6), None,
                            val("optics", "d_coeff", None), val("optics", "velocity", None))
            if blur_mode == "diffusive" and blur.D_coeff is None:
                raise ConfigError("diffusive blur needs d_coeff_m2_per_s", line("optics", "blur"), "blur")

        # coils
        coils = []
        for sec in sorted(s for s in r if s.startswith("coils.")):
            name = sec.split(".", 1)[1]
            kind = val(sec, "kind", "anti_helmholtz")
            if kind not in COIL_KINDS:
                raise ConfigError(f"coil kind must be one of {COIL_KINDS}", line(sec, "kind"), "kind")
            spec = CoilSpec(name, kind, val(sec, "radius", 0.1), val(sec, "separation", 0.15),
                            val(sec, "turns", 50), val(sec, "current", 1.0), val(sec, "axis", (0.0, 0.0, 1.0)),
                            val(sec, "center", (0.0, 0.0, 0.0)), val(sec, "segments", 720))
            target = val(sec, "calibrate_average", None)
            if target is not None:
                if "current" in r[sec]:
                    raise ConfigError("give either current_a or calibrate_average_*, not both",
                                      line(sec, "calibrate_average"), "calibrate_average")
                cal = calibrate_current(spec.build(), target, ensemble.sigma)
                spec = replace(spec, current=cal.loops[0].current)
            spec.build()
            coils.append(spec)
        names = {c.name for c in coils}

        # schedule
        sched = r.get("schedule", {})
        bias_mag = val("schedule", "bias_field", 0.0)
        direction = np.asarray(val("schedule", "bias_direction", (0.0, 0.0, 1.0)), dtype=float)
        if not np.linalg.norm(direction) > 0:
            raise ConfigError("bias_direction must be non-zero", line("schedule", "bias_direction"))
        bias = tuple(float(b) for b in bias_mag * direction / np.linalg.norm(direction))
        seg_ids = sorted({int(_SEGMENT_RE.match(k).group(1)) for k in sched if _SEGMENT_RE.match(k)})
        times = _times(r.get("times", {}))
        segments = []
        for i in seg_ids:
            dkey, ckey = f"segment_{i}_duration", f"segment_{i}_coils"
            if dkey not in sched:
                raise ConfigError(f"segment {i} has no duration", sched[ckey][1] if ckey in sched else None)
            duration = sched[dkey][0]
            if not duration > 0:
                raise ConfigError(f"segment {i} duration must be positive", sched[dkey][1], sched[dkey][2])
            listed = sched.get(ckey, ("none", sched[dkey][1], ckey))
            parts = tuple(p.strip() for p in str(listed[0]).split(",") if p.strip())
            if parts == ("none",):
                parts = ()
            for p in parts:
                if p not in names:
                    raise ConfigError(f"segment {i} refers to unknown coil {p!r}", listed[1], ckey)
            segments.append(ScheduleSegment(duration, parts))
        if seg_ids and seg_ids != list(range(1, len(seg_ids) + 1)):
            raise ConfigError(f"schedule segments must be numbered 1..n, got {seg_ids}")
        if not segments:
            segments = [ScheduleSegment(max(max(times), 1e-9), tuple(sorted(names)))]
        total = sum(s.duration for s in segments)
        if max(times) > total * (1 + 1e-12):
            raise ConfigError(f"schedule covers {total / US:g} us but times reach {max(times) / US:g} us")

        return Scenario(pattern, ensemble, optics, tuple(coils), tuple(segments), bias, times, z_sum, blur,
                        str(val("output", "dir", "out")), bool(val("output", "frames", True)),
                        int(val("output", "seed", 0)))
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(path, overrides: dict[tuple[str, str], str] | None = None) -> Scenario:
    """Parse a scenario file (UTF-8); see :func:`scenario_from_text`."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not valid UTF-8 ({exc})") from None
    return scenario_from_text(text, path.parent, overrides)


def _num(x: float) -> str:
    return repr(float(x))


def _vec(v) -> str:
    return ", ".join(_num(x) for x in v)


def echo_config(s: Scenario, include_output: bool = True) -> str:
    """Fully resolved config text; parsing it reproduces ``s`` exactly."""
    e = s.ensemble
    lines = ["[pattern]", f"source = {s.pattern.source}", f"diameter_m = {_num(s.pattern.physical_diameter)}",
             f"scale_factor = {_num(s.pattern.scale_factor)}", "",
             "[ensemble]", f"sigma_m = {_num(e.sigma)}", f"r_a_m = {_num(e.r_a)}", f"n_z = {e.n_z}",
             f"populations = {', '.join(_num(p) for p in e.populations)}",
             f"fg = {e.Fg}", f"fs = {e.Fs}", f"fe = {e.Fe}", f"alpha = {e.alpha}", f"beta = {e.beta}",
             f"pz_model = {e.pz_model}", f"g_g = {_num(e.g_g)}", f"g_s = {_num(e.g_s)}", "",
             "[optics]", f"grid = {s.optics.grid}", f"pitch_m = {_num(s.optics.pitch)}",
             f"wavelength_m = {_num(s.optics.wavelength)}", f"focal_length_m = {_num(s.optics.focal_length)}",
             f"z_sum = {s.z_sum}"]
    if s.blur is None:
        lines.append("blur = none")
    else:
        lines.append(f"blur = {s.blur.mode}")
        if s.blur.temperature is not None:
            lines.append(f"temperature_k = {_num(s.blur.temperature)}")
        if s.blur.velocity is not None:
            lines.append(f"velocity_m_per_s = {_num(s.blur.velocity)}")
        if s.blur.D_coeff is not None:
            lines.append(f"d_coeff_m2_per_s = {_num(s.blur.D_coeff)}")
    lines.append("")
    for c in s.coils:
        lines += [f"[coils.{c.name}]", f"kind = {c.kind}", f"radius_m = {_num(c.radius)}",
                  f"separation_m = {_num(c.separation)}", f"turns = {c.turns}", f"current_a = {_num(c.current)}",
                  f"axis = {_vec(c.axis)}", f"center_m = {_vec(c.center)}", f"segments = {c.segments}", ""]
    bias = np.asarray(s.bias)
    mag = float(np.linalg.norm(bias))
    lines += ["[schedule]", f"bias_field_tesla = {_num(mag)}",
              f"bias_direction = {_vec(bias / mag if mag > 0 else (0.0, 0.0, 1.0))}"]
    for i, seg in enumerate(s.schedule, start=1):
        lines += [f"segment_{i}_duration_s = {_num(seg.duration)}",
                  f"segment_{i}_coils = {', '.join(seg.coils) if seg.coils else 'none'}"]
    lines += ["", "[times]", f"values_s = {', '.join(_num(t) for t in s.times)}", ""]
    if include_output:
        lines += ["[output]", f"dir = {s.outputs}", f"frames = {str(s.frames).lower()}", f"seed = {s.seed}", ""]
    return "\n".join(lines)


# ---------------------------------------------------------------- running


@dataclass
class RunResult:
    scenario: Scenario
    records: list[SimilarityRecord]
    reference: np.ndarray = field(repr=False)
    images: list[np.ndarray] = field(default_factory=list, repr=False)


def build_memory(s: Scenario, field_cache: dict | None = None) -> PatternMemory:
    u_o = load_pattern(s.pattern, s.optics.grid, s.optics.pitch)
    u_f = fraunhofer(u_o, s.optics.wavelength, s.optics.focal_length)
    return PatternMemory(u_f, s.ensemble, s.field_schedule, s.optics.wavelength, s.optics.focal_length,
                         s.z_sum, s.blur, field_cache=field_cache)


def simulate(s: Scenario, threads: int = 1, field_cache: dict | None = None,
             keep_images: bool = True) -> RunResult:
    """Score every time point of ``s``; results are in time order for any ``threads``."""
    if threads < 1:
        raise InvalidArgumentError("threads must be at least 1")
    try:
        memory = build_memory(s, field_cache)
        ref = memory.reference_image()
        background_similarity(ref)

        def one(t):
            img = memory.image(t).intensity
            return img, score(img, ref, t, memory.efficiency(t))

        if threads == 1:
            results = [one(t) for t in s.times]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(one, s.times))
    except DspError as exc:
        raise type(exc)(f"while simulating pattern {s.pattern.source!r}: {exc}") from exc
    images = [img for img, _ in results] if keep_images else []
    return RunResult(s, [rec for _, rec in results], ref, images)


def frame_name(t: float) -> str:
    return f"frame_t{t / US:010.4f}us_zall.pgm"


def input_hash(s: Scenario) -> str:
    """SHA-256 over the resolved config (without [output]), pattern bytes and constants."""
    h = hashlib.sha256()
    h.update(echo_config(s, include_output=False).encode())
    if s.pattern.is_builtin:
        h.update(f"builtin:{s.pattern.source}".encode())
    else:
        h.update(Path(s.pattern.source).read_bytes())
    h.update(json.dumps(CONSTANTS.as_dict(), sort_keys=True).encode())
    return h.hexdigest()


def write_run(result: RunResult, directory: Path, frames: bool) -> None:
    s = result.scenario
    directory.mkdir(parents=True, exist_ok=True)
    write_curve_csv(directory / "curve.csv", result.records)
    (directory / "config.cfg").write_text(echo_config(s), encoding="utf-8")
    if frames:
        write_pgm16(directory / "reference.pgm", result.reference)
        for t, img in zip(s.times, result.images):
            write_pgm16(directory / frame_name(t), img)
    manifest = {
        "package_version": __version__,
        "input_sha256": input_hash(s),
        "constants": CONSTANTS.as_dict(),
        "n_times": len(s.times),
        "frames": bool(frames),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8")


class _AtomicDir:
    """Write into a temporary sibling directory and move it into place on success."""

    def __init__(self, target):
        self.target = Path(target).resolve()

    def __enter__(self) -> Path:
        parent = self.target.parent
        parent.mkdir(parents=True, exist_ok=True)
        if self.target.exists() and not (self.target / "manifest.json").exists() \
                and not (self.target / "summary.csv").exists() and any(self.target.iterdir()):
            raise OSError(f"output directory {self.target} exists and is not a previous run; refusing to replace")
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.target.name}.", dir=parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        if self.target.exists():
            shutil.rmtree(self.target)
        os.replace(self.tmp, self.target)
        return False


def run_scenario(s: Scenario, out_dir=None, threads: int = 1, frames: bool | None = None) -> RunResult:
    """Simulate ``s`` and write ``curve.csv``, frames, ``config.cfg`` and ``manifest.json``."""
    frames = s.frames if frames is None else frames
    out = Path(out_dir if out_dir is not None else s.outputs)
    result = simulate(s, threads, keep_images=frames)
    with _AtomicDir(out) as tmp:
        write_run(result, tmp, frames)
    return result


# ---------------------------------------------------------------- presets


@dataclass(frozen=True)
class Preset:
    """A bundled config plus named variants given as config overrides."""

    config: str
    variants: tuple[tuple[str, dict], ...] = (("main", {}),)
    sweep: tuple[str, str, str] | None = None  # (column, section, key)


def _bias_variants():
    return tuple((f"bias_{b:.1f}gauss", {("schedule", "bias_field_gauss"): f"{b:.1f}"})
                 for b in np.round(np.arange(0.0, 1.21, 0.1), 1))


PRESETS = {
    "fig2b": Preset("fig2b.cfg", tuple((f"scale_{s:.2f}", {("pattern", "scale_factor"): str(s)})
                                       for s in (1.0, 0.75, 0.5)),
                    ("scale_factor", "pattern", "scale_factor")),
    "fig3a": Preset("fig3a.cfg"),
    "fig3b": Preset("fig3b.cfg", _bias_variants(), ("bias_gauss", "schedule", "bias_field_gauss")),
    "fig3c": Preset("fig3c.cfg"),
    "fig4_nosp": Preset("fig4_nosp.cfg"),
    "fig4_sp": Preset("fig4_sp.cfg", (("static", {}), ("ballistic", {("optics", "blur"): "ballistic"}))),
    "fig5": Preset("fig5.cfg", (("inhom", {}), ("control", {("schedule", "segment_2_coils"): "none"}))),
}


def preset_path(name: str) -> Path:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return Path(str(resources.files("dspimage") / "presets" / PRESETS[name].config))


def preset_scenarios(name: str, overrides: dict | None = None) -> list[tuple[str, Scenario]]:
    path = preset_path(name)
    text = path.read_text(encoding="utf-8")
    out = []
    for variant, ov in PRESETS[name].variants:
        merged = dict(ov)
        merged.update(overrides or {})
        out.append((variant, scenario_from_text(text, path.parent, merged)))
    return out


def run_preset(name: str, out_dir=None, threads: int = 1, frames: bool | None = None,
               overrides: dict | None = None) -> dict[str, RunResult]:
    """Run every variant of a preset into ``out_dir/<variant>/``.

    Multi-variant presets also get ``summary.csv`` with one row per variant
    and time.
    """
    preset = PRESETS.get(name)
    if preset is None:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    scenarios = preset_scenarios(name, overrides)
    out = Path(out_dir if out_dir is not None else scenarios[0][1].outputs)
    cache: dict = {}
    results = {}
    for variant, s in scenarios:
        f = s.frames if frames is None else frames
        results[variant] = (simulate(s, threads, cache, keep_images=f), f)
    with _AtomicDir(out) as tmp:
        for variant, (res, f) in results.items():
            write_run(res, tmp / variant, f)
        if len(results) > 1:
            _write_summary(tmp / "summary.csv", preset, scenarios, {k: v[0] for k, v in results.items()})
    return {k: v[0] for k, v in results.items()}


def _write_summary(path, preset: Preset, scenarios, results) -> None:
    col = preset.sweep[0] if preset.sweep else None
    with open(path, "w", newline="") as fh:
        header = ["variant"] + ([col] if col else []) + ["t_us", "S", "S_r", "efficiency"]
        fh.write(",".join(header) + "\n")
        for variant, s in scenarios:
            extra = []
            if col == "bias_gauss":
                extra = [f"{np.linalg.norm(s.bias) / GAUSS:.6g}"]
            elif col == "scale_factor":
                extra = [f"{s.pattern.scale_factor:.6g}"]
            for rec in results[variant].records:
                fh.write(",".join([variant] + extra + rec.row()) + "\n")


# ---------------------------------------------------------------- fitting and maps


def efficiency_model(s: Scenario, coil_name: str | None = None, field_cache: dict | None = None):
    """Forward model ``(B, times) -> efficiencies`` for the field-strength fit.

    ``B`` is the density-weighted mean ``|B|`` of the scanned coil over the
    ensemble (tesla). The scenario must have a single segment; without a bias
    the field is scaled in the spectral model, otherwise the coils are rebuilt.
    """
    from .fields import ensemble_average_field

    if len(s.schedule) != 1:
        raise InvalidArgumentError("field fits need a single-segment schedule")
    names = s.schedule[0].coils
    if coil_name is None:
        if len(names) != 1:
            raise InvalidArgumentError("name the coil to scan when several are active")
        coil_name = names[0]
    spec = next((c for c in s.coils if c.name == coil_name), None)
    if spec is None or coil_name not in names:
        raise InvalidArgumentError(f"coil {coil_name!r} is not active in the schedule")
    ref_B = ensemble_average_field(spec.build(), s.ensemble.sigma)
    if ref_B == 0:
        raise InvalidArgumentError("scanned coil produces no field")
    memory = build_memory(s, field_cache)
    fast = not any(s.bias) and len(names) == 1

    def model(B, times):
        if fast:
            mem = memory.with_model(memory.model.scaled(B / ref_B))
        else:
            scaled = replace(spec, current=spec.current * B / ref_B)
            coils = tuple(scaled if c.name == coil_name else c for c in s.coils)
            mem = build_memory(replace(s, coils=coils), field_cache)
        return np.array([mem.efficiency(t) for t in times])

    return model, ref_B


def field_map(s: Scenario, extent: float | None = None, points: int = 11, segment: int = 1) -> FieldMap:
    """Field of schedule segment ``segment`` on a cube of half-width ``extent`` (default ``2 sigma``)."""
    if not 1 <= segment <= len(s.schedule):
        raise InvalidArgumentError(f"segment {segment} outside 1..{len(s.schedule)}")
    if points < 1:
        raise InvalidArgumentError("points must be positive")
    h = 2 * s.ensemble.sigma if extent is None else extent
    axis = np.linspace(-h, h, points) if points > 1 else np.zeros(1)
    return FieldMap.sample(s.field_schedule[segment - 1][0], axis, axis, axis)


def summary_rows(result: RunResult) -> list[list[str]]:
    return [rec.row() for rec in result.records]


__all__: Sequence[str] = (
    "CoilSpec", "ScheduleSegment", "OpticsConfig", "Scenario", "scenario_from_text", "parse_config",
    "echo_config", "simulate", "run_scenario", "run_preset", "PRESETS", "preset_scenarios",
    "efficiency_model", "field_map", "input_hash",
)
