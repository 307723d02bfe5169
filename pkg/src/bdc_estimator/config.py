"""Sectioned ``key = value`` run-configuration files.

Sections mirror the pipeline stages::

    [motor]    MotorParams fields, or calibration targets omega_ss / theta_ss / tau_mech
    [duty]     duration, v_a, t_l (one S1 segment) or segments = "dur v t; dur v t"; dt; record_every
    [noise]    sigma_v, sigma_i, seed (required)
    [dataset]  decimate, delay_taps
    [network]  hidden, cascade (full|none), init (uniform|constant), init_value, seed (required)
    [train]    TrainConfig fields; loss_goal may be "none"
    [eval]     window_fraction, ambient, *_max thresholds

Unknown sections and keys are rejected with the offending line number.
"""

from __future__ import annotations

import dataclasses

from .bfgs import TrainConfig
from .errors import ConfigError, InfeasibleTarget
from .estimator import ExperimentConfig, Thresholds
from .motor_model import PARAM_NAMES, params_from_mapping
from .simulator import DutyProfile, Segment, default_profile

_THRESHOLD_KEYS = {
    "speed_rpm_max": "speed_rpm", "theta_max": "theta", "r_a_max": "r_a",
    "speed_pct_max": "speed_pct", "theta_pct_max": "theta_pct", "r_a_pct_max": "r_a_pct",
}

SCHEMA = {
    "motor": set(PARAM_NAMES) | {"omega_ss", "theta_ss", "tau_mech"},
    "duty": {"duration", "v_a", "t_l", "segments", "dt", "record_every"},
    "noise": {"sigma_v", "sigma_i", "seed"},
    "dataset": {"decimate", "delay_taps"},
    "network": {"hidden", "cascade", "init", "init_value", "seed"},
    "train": {f.name for f in dataclasses.fields(TrainConfig)},
    "eval": {"window_fraction", "ambient", *_THRESHOLD_KEYS},
}


class _Entries:
    """Parsed values of one file with their line numbers, consumed key by key."""

    def __init__(self, entries):
        self.entries = entries

    def has(self, section, key):
        return key in self.entries.get(section, {})

    def raw(self, section, key):
        return self.entries[section][key]

    def get(self, section, key, convert, default=None):
        if not self.has(section, key):
            return default
        value, lineno = self.raw(section, key)
        try:
            return convert(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {lineno}: [{section}] {key}: {exc}") from None


def parse_entries(text: str) -> _Entries:
    entries: dict[str, dict[str, tuple[str, int]]] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            entries.setdefault(section, {})
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key {key!r} outside of any section")
        if key not in SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        if key in entries[section]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} in [{section}]")
        entries[section][key] = (value.strip(), lineno)
    return _Entries(entries)


def _int(s: str) -> int:
    return int(s)


def _optional_float(s: str):
    return None if s.lower() == "none" else float(s)


def _segments(s: str) -> tuple[Segment, ...]:
    out = []
    for chunk in s.split(";"):
        parts = chunk.split()
        if len(parts) != 3:
            raise ValueError(f"segment {chunk.strip()!r} must be 'duration v_a t_l'")
        out.append(Segment(*(float(p) for p in parts)))
    return tuple(out)


def _choice(*options):
    def convert(s):
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s
    return convert


def parse_config(text: str, seed_override: int | None = None) -> ExperimentConfig:
    e = parse_entries(text)

    motor = {k: e.get("motor", k, float) for k in SCHEMA["motor"] if e.has("motor", k)}
    try:
        params = params_from_mapping(motor)
    except (ValueError, InfeasibleTarget) as exc:
        raise ConfigError(f"[motor] {exc}") from exc

    if e.has("duty", "segments") and any(e.has("duty", k) for k in ("duration", "v_a", "t_l")):
        _, lineno = e.raw("duty", "segments")
        raise ConfigError(f"line {lineno}: give either segments or duration/v_a/t_l, not both")
    try:
        if e.has("duty", "segments"):
            profile = DutyProfile(e.get("duty", "segments", _segments))
        else:
            base = default_profile(params).segments[0]
            profile = DutyProfile.s1(e.get("duty", "duration", float, base.duration),
                                     e.get("duty", "v_a", float, base.v_a),
                                     e.get("duty", "t_l", float, base.t_l))
    except ValueError as exc:
        raise ConfigError(f"[duty] {exc}") from exc

    seeds = {}
    for section in ("noise", "network"):
        if seed_override is not None:
            seeds[section] = seed_override
        elif not e.has(section, "seed"):
            raise ConfigError(f"[{section}] seed is required")
        else:
            seeds[section] = e.get(section, "seed", _int)

    train_kwargs = {}
    for f in dataclasses.fields(TrainConfig):
        if e.has("train", f.name):
            conv = {"max_iterations": _int, "max_line_search_steps": _int,
                    "loss_goal": _optional_float}.get(f.name, float)
            train_kwargs[f.name] = e.get("train", f.name, conv)
    thresholds = {attr: e.get("eval", key, float) for key, attr in _THRESHOLD_KEYS.items()
                  if e.has("eval", key)}

    defaults = ExperimentConfig.__dataclass_fields__
    try:
        return ExperimentConfig(
            params=params,
            profile=profile,
            dt=e.get("duty", "dt", float, defaults["dt"].default),
            record_every=e.get("duty", "record_every", _int, defaults["record_every"].default),
            sigma_v=e.get("noise", "sigma_v", float),
            sigma_i=e.get("noise", "sigma_i", float),
            noise_seed=seeds["noise"],
            decimate=e.get("dataset", "decimate", _int, defaults["decimate"].default),
            delay_taps=e.get("dataset", "delay_taps", _int, defaults["delay_taps"].default),
            hidden=e.get("network", "hidden", lambda s: tuple(int(v) for v in s.split()),
                         defaults["hidden"].default),
            full_cascade=e.get("network", "cascade", _choice("full", "none"), "full") == "full",
            init_scheme=e.get("network", "init", _choice("uniform", "constant"), "uniform"),
            init_value=e.get("network", "init_value", float, 0.0),
            init_seed=seeds["network"],
            train=TrainConfig(**train_kwargs),
            window_fraction=e.get("eval", "window_fraction", float, 0.1),
            ambient=e.get("eval", "ambient", float, 0.0),
            thresholds=Thresholds(**thresholds),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), seed_override)


def format_config(cfg: ExperimentConfig) -> str:
    """Full, re-parsable echo of every setting actually used."""
    r = lambda x: repr(float(x))
    out = ["# resolved configuration", "", "[motor]"]
    out += [f"{name} = {r(getattr(cfg.params, name))}" for name in PARAM_NAMES]
    out += ["", "[duty]"]
    segs = cfg.profile.segments
    if len(segs) == 1:
        out += [f"duration = {r(segs[0].duration)}", f"v_a = {r(segs[0].v_a)}",
                f"t_l = {r(segs[0].t_l)}"]
    else:
        out.append("segments = " + "; ".join(f"{r(s.duration)} {r(s.v_a)} {r(s.t_l)}" for s in segs))
    out += [f"dt = {r(cfg.dt)}", f"record_every = {cfg.record_every}"]
    out += ["", "[noise]", f"sigma_v = {r(cfg.sigma_v)}", f"sigma_i = {r(cfg.sigma_i)}",
            f"seed = {cfg.noise_seed}"]
    out += ["", "[dataset]", f"decimate = {cfg.decimate}", f"delay_taps = {cfg.delay_taps}"]
    out += ["", "[network]", f"hidden = {' '.join(str(h) for h in cfg.hidden)}",
            f"cascade = {'full' if cfg.full_cascade else 'none'}", f"init = {cfg.init_scheme}",
            f"init_value = {r(cfg.init_value)}", f"seed = {cfg.init_seed}"]
    out += ["", "[train]"]
    for f in dataclasses.fields(TrainConfig):
        v = getattr(cfg.train, f.name)
        out.append(f"{f.name} = {'none' if v is None else (v if isinstance(v, int) else r(v))}")
    out += ["", "[eval]", f"window_fraction = {r(cfg.window_fraction)}", f"ambient = {r(cfg.ambient)}"]
    out += [f"{key} = {r(getattr(cfg.thresholds, attr))}" for key, attr in _THRESHOLD_KEYS.items()]
    return "\n".join(out) + "\n"
