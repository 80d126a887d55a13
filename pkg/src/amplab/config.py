"""Run configuration: sectioned ``key = value`` files.

Every key is validated and every domain object (grid, model, mass, time
grid) is constructed before any computation starts.  Errors carry the file
and line of the offending entry.
"""
from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from .field_model import FieldModel, TorusGrid, build_beamlet_model
from .path_functionals import TimeGrid
from .torus_solver import ComplexMass

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "SCHEMA"]


class ConfigError(ValueError):
    """Invalid configuration; the message is anchored to a file line."""


# section -> key -> default (None = required)
SCHEMA: dict[str, dict[str, str | None]] = {
    "model": {
        "lengths": "6.283185307179586",
        "points": None,
        "modes": None,
        "amplitudes": None,
        "dispersion": "0.5",
    },
    "solver": {
        "horizon": "1.0",
        "steps": "1024",
        "mass": "0, 1",
        "infinite_mass": "false",
    },
    "optimizer": {
        "slices": "64",
        "starts": "8",
        "max_iters": "200",
        "tol": "1e-10",
        "nystrom_nodes": "256",
        "oracle_resolution": "100",
    },
    "experiment": {
        "q": "1",
        "lambda": "1.0",
        "probe": "origin",
        "sample_index": "0",
        "lambdas": "",
        "samples": "0",
        "safety": "0.5",
        "radius_max": "auto",
        "radius_count": "10",
        "rho_max": "1000",
        "rho_count": "8",
        "axis": "all",
    },
    "run": {
        "seed": "0",
        "output_dir": "",
        "workers": "0",
    },
}


@dataclass
class RunConfig:
    model: FieldModel
    mass: ComplexMass
    horizon: float
    steps: int
    tgrid: TimeGrid
    optimizer: dict
    experiment: dict
    seed: int
    output_dir: str
    workers: int
    source: str = "<string>"
    echo: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return self.horizon / self.steps


class _Located:
    """Raw values with their source line numbers."""

    def __init__(self, text: str, source: str):
        self.source = source
        self.lines: dict[tuple[str, str], int] = {}
        self.section_lines: dict[str, int] = {}
        section = None
        for no, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line[0] in "#;":
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip().lower()
                self.section_lines.setdefault(section, no)
            elif section is not None and not raw[0].isspace():
                key = line.split("=", 1)[0].split(":", 1)[0].strip().lower()
                self.lines[(section, key)] = no

    def where(self, section: str, key: str | None = None) -> str:
        no = self.lines.get((section, key)) if key else self.section_lines.get(section)
        if no is None:
            no = self.section_lines.get(section)
        return f"{self.source}:{no}" if no is not None else self.source


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    out = []
    for v in text.split(","):
        v = v.strip()
        if not v:
            continue
        if not v.lstrip("+-").isdigit():
            raise ValueError(f"not an integer: {v!r}")
        out.append(int(v))
    return out


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _modes(text: str) -> list[list[int]]:
    rows = [r for r in text.split(";") if r.strip()]
    if not rows:
        raise ValueError("no modes given")
    return [_ints(r) for r in rows]


def parse_config(text: str, source: str = "<string>", overrides: list[str] | None = None) -> RunConfig:
    """Parse and validate a configuration; ``overrides`` are ``section.key=value``."""
    loc = _Located(text, source)
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        where = f"{source}:{line}" if line else source
        raise ConfigError(f"{where}: {exc.message if hasattr(exc, 'message') else exc}") from None

    raw: dict[str, dict[str, str]] = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{loc.where(section)}: unknown section [{section}]")
        for key, value in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{loc.where(section, key)}: unknown key '{key}' in [{section}]")
            raw.setdefault(section, {})[key] = value

    overridden = set()
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set {item}: expected section.key=value")
        name, value = item.split("=", 1)
        section, key = (p.strip().lower() for p in name.split(".", 1))
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"--set {item}: unknown key '{section}.{key}'")
        raw.setdefault(section, {})[key] = value.strip()
        overridden.add((section, key))

    values: dict[str, dict[str, str]] = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, default in keys.items():
            v = raw.get(section, {}).get(key, default)
            if v is None:
                raise ConfigError(f"{loc.where(section)}: missing required key '{key}' in [{section}]")
            values[section][key] = v

    def field_error(section, key, exc):
        where = f"--set {section}.{key}" if (section, key) in overridden else loc.where(section, key)
        return ConfigError(f"{where}: [{section}] {key}: {exc}")

    def get(section, key, conv):
        try:
            return conv(values[section][key])
        except (ValueError, TypeError) as exc:
            raise field_error(section, key, exc) from None

    def check(ok, section, key, msg):
        if not ok:
            raise field_error(section, key, msg)

    # model
    modes = get("model", "modes", _modes)
    dim = len(modes[0])
    check(all(len(r) == dim for r in modes), "model", "modes", "modes have mixed dimensions")
    check(1 <= dim <= 3, "model", "modes", "dimension must be 1, 2 or 3")
    lengths = get("model", "lengths", _floats)
    points = get("model", "points", _ints)
    if len(lengths) == 1:
        lengths = lengths * dim
    if len(points) == 1:
        points = points * dim
    check(len(lengths) == dim, "model", "lengths", f"need {dim} lengths")
    check(len(points) == dim, "model", "points", f"need {dim} point counts")
    amps = get("model", "amplitudes", _floats)
    try:
        grid = TorusGrid(tuple(lengths), tuple(points))
    except ValueError as exc:
        raise field_error("model", "points", exc) from None
    try:
        model = build_beamlet_model(grid, modes, get("model", "dispersion", float), amps)
    except ValueError as exc:
        key = "amplitudes" if "amplitude" in str(exc) else "modes"
        raise field_error("model", key, exc) from None

    # solver
    horizon = get("solver", "horizon", float)
    check(horizon > 0 and math.isfinite(horizon), "solver", "horizon", "must be positive")
    steps = get("solver", "steps", int)
    check(steps >= 1, "solver", "steps", "must be >= 1")
    if get("solver", "infinite_mass", _bool):
        mass = ComplexMass.inf()
    else:
        parts = get("solver", "mass", _floats)
        check(len(parts) == 2, "solver", "mass", "expected 're, im'")
        try:
            mass = ComplexMass(complex(parts[0], parts[1]))
        except ValueError as exc:
            raise field_error("solver", "mass", exc) from None

    # optimizer
    opt = {
        "slices": get("optimizer", "slices", int),
        "starts": get("optimizer", "starts", int),
        "max_iters": get("optimizer", "max_iters", int),
        "tol": get("optimizer", "tol", float),
        "nystrom_nodes": get("optimizer", "nystrom_nodes", int),
        "oracle_resolution": get("optimizer", "oracle_resolution", int),
    }
    for key in ("slices", "starts", "max_iters", "oracle_resolution"):
        check(opt[key] >= 1, "optimizer", key, "must be >= 1")
    check(opt["nystrom_nodes"] >= 2, "optimizer", "nystrom_nodes", "must be >= 2")
    check(opt["tol"] > 0, "optimizer", "tol", "must be positive")
    tgrid = TimeGrid(horizon, opt["slices"])

    # experiment
    exp = {
        "q": get("experiment", "q", int),
        "lambda": get("experiment", "lambda", float),
        "probe": values["experiment"]["probe"].strip().lower(),
        "sample_index": get("experiment", "sample_index", int),
        "lambdas": get("experiment", "lambdas", _floats),
        "samples": get("experiment", "samples", int),
        "safety": get("experiment", "safety", float),
        "radius_count": get("experiment", "radius_count", int),
        "rho_max": get("experiment", "rho_max", float),
        "rho_count": get("experiment", "rho_count", int),
    }
    check(exp["q"] >= 1, "experiment", "q", "must be a positive integer")
    check(exp["lambda"] >= 0, "experiment", "lambda", "must be nonnegative")
    check(exp["samples"] >= 0, "experiment", "samples", "must be nonnegative")
    check(exp["radius_count"] >= 2, "experiment", "radius_count", "must be >= 2")
    check(exp["rho_count"] >= 2, "experiment", "rho_count", "must be >= 2")
    check(exp["rho_max"] > 0, "experiment", "rho_max", "must be positive")
    check(all(v >= 0 for v in exp["lambdas"]), "experiment", "lambdas", "must be nonnegative")
    rmax = values["experiment"]["radius_max"].strip().lower()
    exp["radius_max"] = None if rmax == "auto" else get("experiment", "radius_max", float)
    if exp["radius_max"] is not None:
        check(exp["radius_max"] > 0, "experiment", "radius_max", "must be positive or 'auto'")
    if exp["probe"] not in ("origin", "maximizer"):
        exp["probe"] = get("experiment", "probe", _floats)
        check(len(exp["probe"]) == dim, "experiment", "probe", f"need {dim} coordinates")
    axis = values["experiment"]["axis"].strip().lower()
    exp["axis"] = None if axis == "all" else get("experiment", "axis", int)
    if exp["axis"] is not None:
        check(0 <= exp["axis"] < model.mode_count**2, "experiment", "axis", "out of range")

    # run
    seed = get("run", "seed", int)
    check(seed >= 0, "run", "seed", "must be nonnegative")
    workers = get("run", "workers", int)
    check(workers >= 0, "run", "workers", "must be >= 0 (0 = all cores)")
    if workers == 0:
        workers = os.cpu_count() or 1

    return RunConfig(
        model=model,
        mass=mass,
        horizon=horizon,
        steps=steps,
        tgrid=tgrid,
        optimizer=opt,
        experiment=exp,
        seed=seed,
        output_dir=values["run"]["output_dir"].strip(),
        workers=workers,
        source=source,
        echo=values,
    )


def load_config(path: str | os.PathLike, overrides: list[str] | None = None) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read config ({exc.strerror})") from None
    return parse_config(text, str(p), overrides)
