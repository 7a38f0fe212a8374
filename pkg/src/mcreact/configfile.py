"""INI-style scenario files and ``key=value`` overrides."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from importlib import resources

from .core import ConfigError, ScenarioConfig, validate

_FLOAT = float


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _bits(text: str) -> tuple:
    bits = tuple(int(b) for b in text.replace(",", " ").split())
    if any(b not in (0, 1) for b in bits):
        raise ValueError("bits must be 0 or 1")
    return bits


def _int(text: str) -> int:
    v = float(text)
    if v != int(v):
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


# section -> key -> (target object, parser)
SCHEMA = {
    "species": {"d_a": ("species", _FLOAT), "d_b": ("species", _FLOAT), "d_c": ("species", _FLOAT)},
    "reaction": {"kappa_f": ("reaction", _FLOAT), "kappa_b": ("reaction", _FLOAT)},
    "grid": {"z_max": ("grid", _FLOAT), "n_rho": ("grid", _int), "n_z": ("grid", _int),
             "stretch": ("grid", _FLOAT)},
    "tx": {"n_a": ("scenario", _FLOAT), "tx_z": ("scenario", _FLOAT)},
    "rx": {"rx_z": ("scenario", _FLOAT), "rx_radius": ("scenario", _FLOAT)},
    "probe": {"mode": ("probe", str), "z": ("probe", _FLOAT), "n_b": ("probe", _FLOAT),
              "release_time": ("probe", _FLOAT), "c_b0": ("probe", _FLOAT),
              "repeat": ("probe", _bool)},
    "detection": {"memory": ("detection", _int), "t_s": ("detection", _FLOAT),
                  "receiver_mode": ("detection", str), "detect_species": ("detection", str),
                  "gamma": ("detection", _int), "gamma_max": ("detection", _int)},
    "run": {"delta_t": ("scenario", _FLOAT), "t_max": ("scenario", _FLOAT),
            "symbol_interval": ("scenario", _FLOAT), "bits": ("run", _bits)},
}


@dataclass(frozen=True)
class DetectionOptions:
    memory: int = 2
    t_s: float | None = None
    receiver_mode: str = "point"
    detect_species: str = "C"
    gamma: int = 0
    gamma_max: int | None = None


@dataclass(frozen=True)
class Experiment:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    detection: DetectionOptions = field(default_factory=DetectionOptions)
    bits: tuple = (1,)


def _resolve_key(key: str):
    key = key.strip()
    if "." in key:
        section, name = key.split(".", 1)
        if section not in SCHEMA or name not in SCHEMA[section]:
            raise ConfigError([f"unknown key {key!r}"])
        return section, name
    hits = [s for s, keys in SCHEMA.items() if key in keys]
    if not hits:
        raise ConfigError([f"unknown key {key!r}"])
    if len(hits) > 1:
        raise ConfigError([f"ambiguous key {key!r}; qualify it as section.{key}"])
    return hits[0], key


def parse_override(text: str):
    if "=" not in text:
        raise ConfigError([f"override {text!r} is not of the form key=value"])
    key, value = text.split("=", 1)
    section, name = _resolve_key(key)
    return section, name, value.strip()


def _apply(values: dict, exp: Experiment) -> Experiment:
    groups = {}
    errors = []
    for (section, name), text in values.items():
        target, parse = SCHEMA[section][name]
        try:
            groups.setdefault(target, {})[name] = parse(text)
        except ValueError as exc:
            errors.append(f"{section}.{name}: {exc}")
    if errors:
        raise ConfigError(errors)
    sc = exp.scenario
    try:
        if "species" in groups:
            sc = replace(sc, species=replace(sc.species, **groups["species"]))
        if "reaction" in groups:
            sc = replace(sc, reaction=replace(sc.reaction, **groups["reaction"]))
        if "grid" in groups:
            sc = replace(sc, grid=replace(sc.grid, **groups["grid"]))
        if "probe" in groups:
            sc = replace(sc, probe=replace(sc.probe, **groups["probe"]))
    except ValueError as exc:
        raise ConfigError([str(exc)]) from None
    if "scenario" in groups:
        sc = replace(sc, **groups["scenario"])
    det = replace(exp.detection, **groups.get("detection", {}))
    bits = groups.get("run", {}).get("bits", exp.bits)
    return Experiment(sc, det, bits)


def read_values(text: str, source: str = "<config>") -> dict:
    cp = configparser.ConfigParser(comment_prefixes=("#", ";"), inline_comment_prefixes=("#",),
                                   interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([f"{source}: {exc}"]) from None
    values, errors = {}, []
    for section in cp.sections():
        if section not in SCHEMA:
            errors.append(f"unknown section [{section}]")
            continue
        for name, value in cp.items(section):
            if name not in SCHEMA[section]:
                errors.append(f"unknown key {section}.{name}")
            else:
                values[(section, name)] = value
    if errors:
        raise ConfigError(errors)
    return values


def load_experiment(path=None, overrides=(), base: Experiment | None = None) -> Experiment:
    """Defaults, then the file (if any), then overrides; the result is validated."""
    exp = base or Experiment()
    values = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError([f"cannot read config {path}: {exc.strerror}"]) from None
        values.update(read_values(text, str(path)))
    for ov in overrides:
        section, name, value = parse_override(ov)
        values[(section, name)] = value
    exp = _apply(values, exp)
    validate(exp.scenario)
    d = exp.detection
    errs = []
    if d.memory < 0:
        errs.append("detection.memory must be >= 0")
    if d.receiver_mode not in ("point", "quadrature"):
        errs.append("detection.receiver_mode must be point or quadrature")
    if d.detect_species not in ("A", "C"):
        errs.append("detection.detect_species must be A or C")
    if d.gamma < 0 or (d.gamma_max is not None and d.gamma_max < 0):
        errs.append("thresholds must be >= 0")
    if errs:
        raise ConfigError(errs)
    return exp


def canonical_config_text() -> str:
    return resources.files("mcreact").joinpath("data/baseline.cfg").read_text(encoding="utf-8")


def known_keys():
    return sorted(f"{s}.{k}" for s, keys in SCHEMA.items() for k in keys)

