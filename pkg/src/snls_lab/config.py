"""Flat ``key=value`` experiment configuration with strict validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .grid import GridError, make_grid

EXPERIMENTS = ("mass-check", "dissipation-check", "dispersive-check", "duhamel-check",
               "gamma-sweep", "scattering-study", "burkholder-check")


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_float(text: str) -> float:
    low = text.strip().lower()
    if low in ("inf", "+inf", "infinity"):
        return math.inf
    return float(text)


def _parse_floats(text: str) -> tuple:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    return tuple(_parse_float(p) for p in parts)


def _parse_optional_float(text: str):
    return None if text.strip() in ("", "auto") else _parse_float(text)


def _fmt_float(x) -> str:
    if x is None:
        return "auto"
    if math.isinf(x):
        return "inf"
    return repr(float(x))


@dataclass(frozen=True)
class Key:
    parse: object
    default: object
    show: object = str
    check: object = None
    rule: str = ""


def _positive(x):
    return x > 0


def _nonneg(x):
    return x >= 0


SCHEMA = {
    "experiment": Key(str, "mass-check", check=lambda x: x in EXPERIMENTS,
                      rule=f"one of {', '.join(EXPERIMENTS)}"),
    "grid.d": Key(int, 1, check=lambda x: x in (1, 2, 3), rule="d in {1, 2, 3}"),
    "grid.L": Key(float, 64.0, repr, _positive, "L > 0"),
    "grid.N": Key(int, 256, check=lambda x: x >= 16 and x & (x - 1) == 0,
                  rule="N a power of two, N >= 16"),
    "flow.dt": Key(float, 1e-3, repr, lambda x: 0 < x <= 0.1, "0 < dt <= 0.1"),
    "flow.horizon": Key(float, 10.0, repr, _nonneg, "horizon >= 0"),
    "flow.checkpoints": Key(int, 20, check=lambda x: x >= 1, rule="checkpoints >= 1"),
    "noise.v0": Key(float, 1.0, repr, _nonneg, "v0 >= 0"),
    "noise.gamma": Key(float, 0.1, repr, _nonneg, "gamma >= 0"),
    "noise.width": Key(float, 1.0, repr, _positive, "width > 0"),
    "data.l2": Key(float, 1.0, repr, _positive, "l2 > 0"),
    "data.width": Key(float, 1.0, repr, _positive, "width > 0"),
    "data.random": Key(_parse_bool, False, lambda b: "true" if b else "false"),
    "ensemble.paths": Key(int, 8, check=lambda x: x >= 1, rule="paths >= 1"),
    "ensemble.seed": Key(int, 0, check=lambda x: 0 <= x < 2**64, rule="0 <= seed < 2^64"),
    "ensemble.rho": Key(_parse_floats, (1.5, 2.0, 4.0, math.inf),
                        lambda v: ",".join(_fmt_float(x) for x in v),
                        lambda v: len(v) > 0 and all(x >= 1 for x in v), "every rho >= 1"),
    "ensemble.workers": Key(int, 1, check=lambda x: x >= 1, rule="workers >= 1"),
    "strichartz.alpha": Key(_parse_optional_float, None, _fmt_float,
                            lambda x: x is None or x >= 2, "alpha >= 2 or auto"),
    "strichartz.beta": Key(_parse_optional_float, None, _fmt_float,
                           lambda x: x is None or x >= 2, "beta >= 2 or auto"),
    "maximal.enabled": Key(_parse_bool, True, lambda b: "true" if b else "false"),
    "maximal.dt": Key(_parse_optional_float, None, _fmt_float,
                      lambda x: x is None or 0 < x <= 0.1, "0 < dt <= 0.1 or auto"),
    "sweep.gammas": Key(_parse_floats, (2.0, 0.5, 0.1, 0.0),
                        lambda v: ",".join(_fmt_float(x) for x in v),
                        lambda v: len(v) > 0 and all(x >= 0 for x in v), "every gamma >= 0"),
    "sweep.horizons": Key(_parse_floats, (20.0,), lambda v: ",".join(_fmt_float(x) for x in v),
                          lambda v: len(v) > 0 and all(x > 0 for x in v), "every horizon > 0"),
    "scattering.early": Key(float, 5.0, repr, _positive, "early > 0"),
    "scattering.from": Key(float, 2.0, repr, _nonneg, "from >= 0"),
    "scattering.factor": Key(float, 0.2, repr, _positive, "factor > 0"),
    "burkholder.paths": Key(int, 4096, check=lambda x: x >= 2, rule="paths >= 2"),
    "burkholder.steps": Key(int, 1000, check=lambda x: x >= 1, rule="steps >= 1"),
    "burkholder.horizon": Key(float, 1.0, repr, _positive, "horizon > 0"),
    "burkholder.rho": Key(_parse_float, 2.0, _fmt_float, lambda x: 2 <= x < math.inf,
                          "2 <= rho < inf"),
    "burkholder.bound": Key(float, 4.5, repr, _positive, "bound > 0"),
    "dispersive.times": Key(_parse_floats, (1.0, 2.0, 4.0, 8.0, 12.0, 16.0, 20.0),
                            lambda v: ",".join(_fmt_float(x) for x in v),
                            lambda v: len(v) > 0 and all(x > 0 for x in v)
                            and all(b > a for a, b in zip(v, v[1:])),
                            "positive, strictly increasing"),
    "output.dir": Key(str, "out"),
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: {k: s.default for k, s in SCHEMA.items()})

    def __getitem__(self, key):
        return self.values[key]

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.values == other.values

    @property
    def experiment(self) -> str:
        return self.values["experiment"]

    def replace(self, **overrides) -> "ExperimentConfig":
        vals = dict(self.values)
        for k, v in overrides.items():
            vals[k.replace("__", ".")] = v
        cfg = ExperimentConfig(vals)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for key, spec in SCHEMA.items():
            if spec.check is not None and not spec.check(self.values[key]):
                raise ConfigError(f"{key}={spec.show(self.values[key])} violates: {spec.rule}")
        try:
            make_grid(self["grid.d"], self["grid.L"], self["grid.N"])
        except GridError as exc:
            raise ConfigError(f"grid: {exc}") from None
        dt, T = self["flow.dt"], self["flow.horizon"]
        if abs(round(T / dt) * dt - T) > 1e-9 * max(1.0, T):
            raise ConfigError(f"flow.horizon={T!r} violates: horizon a multiple of flow.dt")

    def to_text(self) -> str:
        lines = [f"{k}={SCHEMA[k].show(v)}" for k, v in self.values.items()]
        return "\n".join(lines) + "\n"


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key=value`` lines; ``#`` starts a comment; unknown keys are errors."""
    values = {k: s.default for k, s in SCHEMA.items()}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            values[key] = SCHEMA[key].parse(val)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {val!r} ({exc})") from None
    cfg = ExperimentConfig(values)
    cfg.validate()
    return cfg
