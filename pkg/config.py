"""
Experiment files: a sectioned `key = value` format with `#` comments.

    [sim]
    variant = aipoc
    dt = 0.005      # seconds

Keys are case sensitive (`m` and `M` are different masses). Every key is optional;
see README.md for the full list and defaults.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping

from parse import compile

from analysis import ScanThresholds
from common import ConfigurationError, read_lines, strict
from estimator import Gating, ScheduleMode
from linearize import EquilibriumKind
from model import ModelParams, Variant
from simengine import ScenarioConfig
from synthesis import NoiseLevels, Profile

SECTION = strict(compile("[{name:w}]"))
ENTRY = strict(compile("{key:w} = {value}"))

DEFAULT_RHOS = (1.0, 0.5, 0.2, 0.1, 0.05, 0.01)


class Command(str, Enum):
    SIMULATE = "simulate"
    SWEEP_RHO = "sweep-rho"
    COMPARE = "compare"
    PROFILES = "profiles"
    STABILITY_MAP = "stability-map"


@dataclass(frozen=True)
class ScanSettings:
    samples: int = 10_000
    resolution: int = 80
    radius: int = 2
    workers: int | None = None
    thresholds: ScanThresholds = ScanThresholds()

    def __post_init__(self):
        for key in ("samples", "resolution"):
            if getattr(self, key) < 1:
                raise ConfigurationError(f"must be >= 1, got {getattr(self, key)}", key=f"scan.{key}")
        if self.radius < 0:
            raise ConfigurationError(f"must be >= 0, got {self.radius}", key="scan.radius")
        if self.workers is not None and self.workers < 1:
            raise ConfigurationError(f"must be >= 1, got {self.workers}", key="scan.workers")


@dataclass(frozen=True)
class ExperimentSpec:
    command: Command = Command.SIMULATE
    scenario: ScenarioConfig = ScenarioConfig()
    rho_list: tuple[float, ...] = DEFAULT_RHOS
    out: Path = Path("results")
    scan: ScanSettings = ScanSettings()

    def __post_init__(self):
        if not self.rho_list or not all(0 < r <= 1 for r in self.rho_list):
            raise ConfigurationError(
                f"every entry must be in (0, 1], got {self.rho_list}", key="experiment.rho_list"
            )


def _boolean(text: str) -> bool:
    match text.lower():
        case "true" | "yes" | "on" | "1":
            return True
        case "false" | "no" | "off" | "0":
            return False
    raise ValueError(f"not a boolean: {text!r}")


def _number(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"not a finite number: {text!r}")
    return value


def _numbers(text: str) -> tuple[float, ...]:
    return tuple(_number(part) for part in text.split(","))


def _optional(caster: Callable[[str], Any]) -> Callable[[str], Any]:
    return lambda text: None if text.lower() == "none" else caster(text)


def _choice(enum: type[Enum]) -> Callable[[str], Any]:
    def caster(text: str) -> Any:
        try:
            return enum(text)
        except ValueError:
            options = ", ".join(e.value for e in enum)
            raise ValueError(f"{text!r} is not one of {options}") from None

    return caster


SCHEMA: dict[str, dict[str, Callable[[str], Any]]] = {
    "experiment": {
        "command": _choice(Command),
        "seed": int,
        "out": Path,
        "rho_list": _numbers,
    },
    "model": {
        "m": _number,
        "M": _number,
        "g": _number,
        "ell": _number,
        "delta": _number,
        "u_max": _optional(_number),
    },
    "weights": {
        "profile": _choice(Profile),
        "q": _optional(_number),
        "r": _optional(_number),
    },
    "filter": {
        "rho": _number,
        "schedule": _choice(ScheduleMode),
        "gating": _choice(Gating),
        "p0": _number,
        "inject_noise": _boolean,
        "process": _number,
        "position": _number,
        "accelerometer": _number,
        "gyroscope": _number,
        "encoder": _number,
    },
    "sim": {
        "variant": _choice(Variant),
        "equilibrium": _choice(EquilibriumKind),
        "T": _number,
        "dt": _number,
        "x0": _numbers,
        "x_ref": _number,
        "band": _number,
    },
    "scan": {
        "samples": int,
        "resolution": int,
        "radius": int,
        "workers": _optional(int),
        "x_tol": _number,
        "theta_tol": _number,
        "u_sat_pct": _number,
        "effort": _number,
    },
}


def _cast(path: str, text: str, line: int | None) -> Any:
    if "." not in path:
        raise ConfigurationError("expected section.key", key=path, line=line)
    section, key = path.split(".", 1)
    if section not in SCHEMA:
        raise ConfigurationError(f"unknown section [{section}]", line=line)
    if key not in SCHEMA[section]:
        raise ConfigurationError("unknown key", key=path, line=line)
    try:
        return SCHEMA[section][key](text.strip())
    except ValueError as e:
        raise ConfigurationError(str(e), key=path, line=line) from None


def read_entries(path: Path) -> dict[str, tuple[str, int]]:
    """Raw `section.key -> (text, line number)` pairs of a config file."""
    entries: dict[str, tuple[str, int]] = {}
    section = None
    for number, raw in enumerate(read_lines(path), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if header := SECTION.match(line):
            section = header["name"]
            if section not in SCHEMA:
                raise ConfigurationError(f"unknown section [{section}]", line=number)
            continue

        entry = ENTRY.match(" = ".join(part.strip() for part in line.split("=", 1)))
        if entry is None:
            raise ConfigurationError(f"expected 'key = value', got {line!r}", line=number)
        if section is None:
            raise ConfigurationError("entry outside of any section", key=entry["key"], line=number)

        key = f"{section}.{entry['key']}"
        if key in entries:
            raise ConfigurationError(
                f"already set on line {entries[key][1]}", key=key, line=number
            )
        entries[key] = (entry["value"], number)
    return entries


def _build(values: Mapping[str, Any]) -> ExperimentSpec:
    def pick(section: str, names: Mapping[str, str] | None = None) -> dict[str, Any]:
        prefix = f"{section}."
        chosen = {k.removeprefix(prefix): v for k, v in values.items() if k.startswith(prefix)}
        return {(names or {}).get(k, k): v for k, v in chosen.items()}

    params = ModelParams(**pick("model"))
    filter_ = pick("filter")
    noise_keys = {f.name for f in fields(NoiseLevels)}
    noise = NoiseLevels(**{k: v for k, v in filter_.items() if k in noise_keys})

    scenario = ScenarioConfig(
        params=params,
        noise=noise,
        **pick("weights", {"q": "q_scale", "r": "r_scale"}),
        **{
            {"schedule": "schedule_mode"}.get(k, k): v
            for k, v in filter_.items()
            if k not in noise_keys
        },
        **pick("sim", {"equilibrium": "kind"}),
        **{k: v for k, v in pick("experiment").items() if k == "seed"},
    )

    scan = pick("scan")
    threshold_keys = {f.name for f in fields(ScanThresholds)}
    thresholds = ScanThresholds(**{k: v for k, v in scan.items() if k in threshold_keys})
    settings = ScanSettings(
        thresholds=thresholds, **{k: v for k, v in scan.items() if k not in threshold_keys}
    )

    experiment = {k: v for k, v in pick("experiment").items() if k != "seed"}
    return ExperimentSpec(scenario=scenario, scan=settings, **experiment)


def _with_line(error: ConfigurationError, lines: Mapping[str, int]) -> ConfigurationError:
    if error.key is None or error.line is not None:
        return error
    for path, line in lines.items():
        if path == error.key or path.endswith(f".{error.key}"):
            return ConfigurationError(str(error).removeprefix(f"{error.key}: "), path, line)
    return error


def parse_config(
    path: Path | None = None, overrides: Mapping[str, str] | None = None
) -> ExperimentSpec:
    """
    Load and validate an experiment. `overrides` maps `section.key` to text and
    wins over the file.

    >>> spec = parse_config()
    >>> spec.scenario.variant.value, spec.scenario.profile.value, spec.scenario.dt
    ('aipoc', 'ours', 0.005)
    >>> parse_config(overrides={"sim.dt": "0"})  # doctest: +IGNORE_EXCEPTION_DETAIL
    Traceback (most recent call last):
    ConfigurationError: sim.dt: must be > 0, got 0.0
    >>> parse_config(overrides={"filter.rho": "0.2"}).scenario.schedule.period
    5
    """
    entries = read_entries(path) if path is not None else {}
    lines = {key: line for key, (_, line) in entries.items()}
    values = {key: _cast(key, text, line) for key, (text, line) in entries.items()}

    for key, text in (overrides or {}).items():
        values[key] = _cast(key, text, None)
        lines.pop(key, None)

    try:
        return _build(values)
    except ConfigurationError as e:
        raise _with_line(e, lines) from None


def _text(value: Any) -> str:
    match value:
        case Enum():
            return value.value
        case bool():
            return "true" if value else "false"
        case float():
            return repr(value)
        case tuple():
            return ", ".join(_text(v) for v in value)
        case _:
            return str(value)


def dump_config(spec: ExperimentSpec) -> str:
    """
    The spec as a config file that parses back to an equal spec.

    >>> spec = parse_config(overrides={"sim.variant": "ipoc", "filter.rho": "0.1"})
    >>> text = dump_config(spec)
    >>> "[filter]" in text and "rho = 0.1" in text
    True
    """
    s, scan = spec.scenario, spec.scan
    sections: dict[str, dict[str, Any]] = {
        "experiment": {
            "command": spec.command,
            "seed": s.seed,
            "out": spec.out,
            "rho_list": spec.rho_list,
        },
        "model": {f.name: getattr(s.params, f.name) for f in fields(ModelParams)},
        "weights": {"profile": s.profile, "q": s.q_scale, "r": s.r_scale},
        "filter": {
            "rho": s.rho,
            "schedule": s.schedule_mode,
            "gating": s.gating,
            "p0": s.p0,
            "inject_noise": s.inject_noise,
            **{f.name: getattr(s.noise, f.name) for f in fields(NoiseLevels)},
        },
        "sim": {
            "variant": s.variant,
            "equilibrium": s.kind,
            "T": s.T,
            "dt": s.dt,
            "x0": tuple(float(v) for v in s.x0),
            "x_ref": s.x_ref,
            "band": s.band,
        },
        "scan": {
            "samples": scan.samples,
            "resolution": scan.resolution,
            "radius": scan.radius,
            "workers": scan.workers,
            **{f.name: getattr(scan.thresholds, f.name) for f in fields(ScanThresholds)},
        },
    }

    out = []
    for name, entries in sections.items():
        out.append(f"[{name}]")
        out.extend(f"{k} = {_text(v)}" for k, v in entries.items() if v is not None)
        out.append("")
    return "\n".join(out)


def write_config(spec: ExperimentSpec, path: Path) -> Path:
    path.write_text(dump_config(spec))
    return path

