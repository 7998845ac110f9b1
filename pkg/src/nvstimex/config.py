"""Run configuration: a TOML document with sections ``rates``, ``pump``,
``pulse``, ``sim`` and ``experiment``.

Physical quantities carry their unit in the key name (``*_hz``, ``*_s``,
``*_nm``, ``*_w``, ``*_m2``).  Unknown keys are rejected; sections that the
selected experiment does not use are accepted with a warning.

Example::

    [pump]
    green_rate_hz = 92e6

    [experiment]
    kind = "steady-state"
"""

from __future__ import annotations

import logging
import math
import sys
from dataclasses import dataclass, field

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import DomainError
from .experiments import DEFAULT_GREEN_RATES_HZ
from .model import IntegratorControls, ModelParams, PulseTrain, PumpDrive, RateConstants

log = logging.getLogger(__name__)

UNIT_SUFFIXES = ("hz", "s", "nm", "w", "m2")
SECTIONS = ("rates", "pump", "pulse", "sim", "experiment")
KINDS = (
    "steady-state",
    "simulate",
    "sweep-wavelength",
    "sweep-power",
    "recovery",
    "fit",
    "classify",
)


class ConfigError(DomainError):
    pass


_REQUIRED = object()
_OPTIONAL = object()


@dataclass(frozen=True)
class _Key:
    default: object
    kind: str = "float"  # float | int | str | floats | strs | bounds | table
    check: str = "positive"  # positive | nonneg | any


def _f(default=_REQUIRED, check="positive"):
    return _Key(default, "float", check)


_COMMON = {
    "rates": {"l21_hz": _f(65.3e6), "l23_hz": _f(18e6), "l31_hz": _f(1e12)},
    "pump": {"green_rate_hz": _f(check="nonneg")},
    "pulse": {
        "eq_rate_hz": _f(check="nonneg"),
        "red2_rate_hz": _f(0.0, "nonneg"),
        "period_s": _f(),
        "sigma_t_s": _f(6e-12),
        "eq_width_s": _f(6e-12),
        "t0_s": _f(1e-9, "nonneg"),
    },
    "sim": {
        "rtol": _f(1e-8),
        "atol": _f(1e-12),
        "max_pulse_step_s": _f(0.5e-12),
        "sample_dt_s": _f(1e-10),
        "pulse_sample_dt_s": _f(1e-12),
        "max_pulses": _Key(60, "int"),
    },
}

_EXPERIMENT = {
    "steady-state": {"relax_tol": _f(1e-9)},
    "simulate": {"n_pulses": _Key(10, "int"), "n_avg": _Key(10, "int")},
    "sweep-wavelength": {
        "centres_nm": _Key([600.0 + 20.0 * i for i in range(12)], "floats"),
        "bandwidth_nm": _f(20.0),
        "anchor_rate_hz": _f(6e9, "nonneg"),
        "anchor_wavelength_nm": _f(682.0),
        "spectrum_csv": _Key(_OPTIONAL, "str"),
        "spectrum_resolution_nm": _f(0.5),
        "smoothing_window_nm": _f(_OPTIONAL),
        "measured_powers_w": _Key(_OPTIONAL, "floats"),
        "reference_power_w": _f(_OPTIONAL),
        "n_avg": _Key(10, "int"),
    },
    "sweep-power": {
        "green_rates_hz": _Key([float(g) for g in DEFAULT_GREEN_RATES_HZ], "floats"),
        "n_avg": _Key(10, "int"),
    },
    "recovery": {"window_start_s": _f(_OPTIONAL), "window_end_s": _f(_OPTIONAL)},
    "fit": {
        "observed_csv": _Key(_REQUIRED, "strs"),
        "free": _Key(_REQUIRED, "bounds"),
        "initial": _Key(_OPTIONAL, "table"),
        "grid_points": _Key(0, "int", "nonneg"),
    },
    "classify": {"wavelengths_nm": _Key(_REQUIRED, "floats")},
}
_EXPERIMENT_COMMON = {"kind": _Key(_REQUIRED, "str", "any"), "out_dir": _Key(".", "str", "any")}

# Sections each experiment reads.
USES = {
    "steady-state": ("rates", "pump"),
    "simulate": ("rates", "pump", "pulse", "sim"),
    "sweep-wavelength": ("rates", "pump", "pulse", "sim"),
    "sweep-power": ("rates", "pulse", "sim"),
    "recovery": ("rates", "pump", "pulse", "sim"),
    "fit": ("rates", "pump", "pulse", "sim"),
    "classify": (),
}
# Keys whose default differs by experiment.
_OVERRIDES = {"sweep-wavelength": {("pulse", "eq_rate_hz"): _f(0.0, "nonneg")}}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration with defaults filled in.

    Sections an experiment does not use are left empty.
    """

    rates: dict = field(default_factory=dict)
    pump: dict = field(default_factory=dict)
    pulse: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)

    @property
    def kind(self):
        return self.experiment["kind"]

    def section(self, name):
        return getattr(self, name)

    def model_params(self, green_rate=None):
        rates = RateConstants(self.rates["l21_hz"], self.rates["l23_hz"], self.rates["l31_hz"])
        if green_rate is None:
            green_rate = self.pump["green_rate_hz"] if self.pump else 0.0
        pulses = None
        if self.pulse:
            p = self.pulse
            pulses = PulseTrain(
                eq_rate=p["eq_rate_hz"], period=p["period_s"], sigma_t=p["sigma_t_s"],
                eq_width=p["eq_width_s"], red2_rate=p["red2_rate_hz"], t0=p["t0_s"],
            )
        return ModelParams(rates, PumpDrive(green_rate), pulses)

    def controls(self):
        s = self.sim
        return IntegratorControls(
            rtol=s["rtol"], atol=s["atol"], max_pulse_step=s["max_pulse_step_s"],
            sample_dt=s["sample_dt_s"], pulse_sample_dt=s["pulse_sample_dt_s"],
        )


def _schema_for(kind, section):
    if section == "experiment":
        return {**_EXPERIMENT_COMMON, **_EXPERIMENT[kind]}
    schema = dict(_COMMON[section])
    for (sec, key), spec in _OVERRIDES.get(kind, {}).items():
        if sec == section:
            schema[key] = spec
    return schema


def _unknown_key_error(section, key, schema):
    stem, _, suffix = key.rpartition("_")
    if stem:
        for known in schema:
            k_stem, _, k_suffix = known.rpartition("_")
            if k_stem == stem and k_suffix in UNIT_SUFFIXES and suffix != k_suffix:
                return ConfigError(
                    f"unit suffix mismatch for '{section}.{key}': expected '{known}'"
                )
    return ConfigError(f"unknown key '{section}.{key}'")


def _check_number(name, value, check):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{name}' must be a number")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"'{name}' must be finite")
    if check == "positive" and not value > 0:
        raise ConfigError(f"'{name}' must be positive, got {value:g}")
    if check == "nonneg" and not value >= 0:
        raise ConfigError(f"'{name}' must be non-negative, got {value:g}")
    return value


def _coerce(name, value, spec):
    if spec.kind == "float":
        return _check_number(name, value, spec.check)
    if spec.kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{name}' must be an integer")
        if spec.check == "positive" and value < 1 or spec.check == "nonneg" and value < 0:
            raise ConfigError(f"'{name}' out of range: {value}")
        return value
    if spec.kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"'{name}' must be a string")
        return value
    if spec.kind == "floats":
        if not isinstance(value, list) or not value:
            raise ConfigError(f"'{name}' must be a non-empty list of numbers")
        return [_check_number(name, v, spec.check) for v in value]
    if spec.kind == "strs":
        if isinstance(value, str):
            value = [value]
        if not isinstance(value, list) or not value or not all(isinstance(v, str) for v in value):
            raise ConfigError(f"'{name}' must be a string or a list of strings")
        return list(value)
    if spec.kind == "bounds":
        if not isinstance(value, dict) or not value:
            raise ConfigError(f"'{name}' must be a non-empty table of [low, high] bounds")
        out = {}
        for k, v in value.items():
            if not isinstance(v, list) or len(v) != 2:
                raise ConfigError(f"'{name}.{k}' must be [low, high]")
            lo, hi = (_check_number(f"{name}.{k}", x, "positive") for x in v)
            if not lo < hi:
                raise ConfigError(f"'{name}.{k}' needs low < high")
            out[k] = [lo, hi]
        return out
    if spec.kind == "table":
        if not isinstance(value, dict):
            raise ConfigError(f"'{name}' must be a table")
        return {k: _check_number(f"{name}.{k}", v, "positive") for k, v in value.items()}
    raise AssertionError(spec.kind)


def parse_config(document):
    """Parse and validate a TOML run configuration."""
    try:
        raw = tomllib.loads(document)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for name in raw:
        if name not in SECTIONS:
            raise ConfigError(f"unknown section '{name}'")
        if not isinstance(raw[name], dict):
            raise ConfigError(f"'{name}' must be a section")
    experiment = raw.get("experiment")
    if not experiment:
        raise ConfigError("missing section [experiment] (needs at least 'kind')")
    kind = experiment.get("kind")
    if kind is None:
        raise ConfigError("missing required key 'experiment.kind'")
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}")

    used = set(USES[kind]) | {"experiment"}
    sections = {}
    for name in SECTIONS:
        given = raw.get(name, {})
        if name not in used:
            if given:
                log.warning("section [%s] is not used by experiment '%s'", name, kind)
            sections[name] = {}
            continue
        schema = _schema_for(kind, name)
        for key in given:
            if key not in schema:
                raise _unknown_key_error(name, key, schema)
        out = {}
        for key, spec in schema.items():
            if key in given:
                out[key] = _coerce(f"{name}.{key}", given[key], spec)
            elif spec.default is _REQUIRED:
                raise ConfigError(f"missing required key '{name}.{key}'")
            elif spec.default is not _OPTIONAL:
                out[key] = spec.default
        sections[name] = out
    cfg = RunConfig(**sections)
    if cfg.pulse or cfg.rates:
        try:
            cfg.model_params(green_rate=cfg.pump.get("green_rate_hz", 0.0))
            if cfg.sim:
                cfg.controls()
        except DomainError as exc:
            raise ConfigError(str(exc)) from None
    return cfg


def serialize_config(config):
    """TOML text that :func:`parse_config` maps back to ``config``."""
    doc = {}
    for name in SECTIONS:
        section = config.section(name)
        if section:
            doc[name] = section
    return tomli_w.dumps(doc)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
