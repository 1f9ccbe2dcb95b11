"""Flat key=value configuration with a typed schema.

Grammar: one `section.key = value` assignment per line, `#` starts a
comment, blank lines are ignored. Sections are fixed (world, train,
loss, eval, mi, diag) and every key carries a type and range; unknown
keys are rejected by name. The rendered form of a resolved config is
itself valid input, so a run can be reproduced from its own banner.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .data import AUGMENT_LEVELS, make_world
from .errors import ConfigError
from .fewshot import EpisodeSpec, ProbeConfig
from .losses import LossConfig, _NEG_POLICIES
from .trainer import REGIMES, TrainConfig

ENV_SEED = "UNISIAM_SEED"

_INT_MAX = 2**31 - 1


@dataclass(frozen=True)
class KeySpec:
    kind: str                      # int | float | enum | floatlist | intlist
    default: object
    lo: float | None = None        # inclusive unless lo_open
    hi: float | None = None        # inclusive
    lo_open: bool = False
    choices: tuple[str, ...] | None = None


# value kinds:
#   int       integer literal within [lo, hi]
#   float     int or float literal within range; lo_open excludes lo
#   enum      one of choices
#   floatlist comma list of floats, or an a:b:step grid, each in range
#   intlist   comma list of integers
SCHEMA: dict[str, KeySpec] = {
    "world.class_count": KeySpec("int", 20, lo=3, hi=100_000),
    "world.per_class": KeySpec("int", 200, lo=2, hi=1_000_000),
    "world.ambient_dim": KeySpec("int", 64, lo=1, hi=65_536),
    "world.latent_dim": KeySpec("int", 8, lo=1, hi=65_536),
    "world.nuisance": KeySpec("float", 0.1, lo=0.0),
    "world.latent_scale": KeySpec("float", 1.0, lo=0.0),
    "world.seed": KeySpec("int", 0, lo=0, hi=_INT_MAX),

    "train.regime": KeySpec("enum", "unisiam", choices=REGIMES),
    "train.epochs": KeySpec("int", 100, lo=1, hi=1_000_000),
    "train.batch_size": KeySpec("int", 64, lo=2, hi=1_000_000),
    "train.lr": KeySpec("float", 0.1, lo=0.0),
    "train.seed": KeySpec("int", 0, lo=0, hi=_INT_MAX),
    "train.augment": KeySpec("enum", "default", choices=AUGMENT_LEVELS),
    "train.eval_every": KeySpec("int", 25, lo=0, hi=1_000_000),

    "loss.temperature": KeySpec("float", 2.0, lo=0.0, lo_open=True),
    "loss.uniformity_weight": KeySpec("float", 0.1, lo=0.0),
    "loss.alpha": KeySpec("float", 0.5, lo=0.0, hi=1.0),
    "loss.neg_policy": KeySpec("enum", "exclude-self-and-positive",
                               choices=_NEG_POLICIES),

    "eval.n_way": KeySpec("int", 5, lo=2, hi=10_000),
    "eval.k_shot": KeySpec("int", 5, lo=1, hi=10_000),
    "eval.n_query": KeySpec("int", 15, lo=1, hi=10_000),
    "eval.episodes": KeySpec("int", 600, lo=1, hi=10_000_000),
    "eval.seed": KeySpec("int", 0, lo=0, hi=_INT_MAX),
    "eval.power": KeySpec("float", 0.5, lo=0.0, hi=1.0, lo_open=True),
    "eval.max_iter": KeySpec("int", 500, lo=1, hi=1_000_000),
    "eval.tol": KeySpec("float", 1e-7, lo=0.0, lo_open=True),
    "eval.workers": KeySpec("int", 1, lo=1, hi=256),

    "mi.dim": KeySpec("int", 16, lo=1, hi=65_536),
    "mi.batch": KeySpec("int", 64, lo=2, hi=1_000_000),
    "mi.steps": KeySpec("int", 2000, lo=1, hi=10_000_000),
    "mi.lr0": KeySpec("float", 0.01, lo=0.0, lo_open=True),
    "mi.eval_batches": KeySpec("int", 100, lo=1, hi=1_000_000),
    "mi.rho": KeySpec("floatlist", (0.1, 0.3, 0.5, 0.7, 0.9),
                      lo=-1.0, hi=1.0, lo_open=True),
    "mi.seeds": KeySpec("intlist", (0,), lo=0, hi=_INT_MAX),
    "mi.workers": KeySpec("int", 1, lo=1, hi=256),

    "diag.split": KeySpec("enum", "val", choices=("train", "val", "test")),
    "diag.max_rows": KeySpec("int", 512, lo=2, hi=1_000_000),
    "diag.temperature": KeySpec("float", 2.0, lo=0.0, lo_open=True),
}

_SEED_KEYS = ("world.seed", "train.seed", "eval.seed")


class Config:
    """A fully resolved, validated configuration."""

    def __init__(self, values: dict[str, object]):
        self.values = values

    def __getitem__(self, key: str) -> object:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key: {key}")
        return self.values[key]

    def section(self, name: str) -> dict[str, object]:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items()
                if k.startswith(prefix)}

    def render(self) -> str:
        """Config-grammar text that parses back to this exact config."""
        lines = []
        for key in sorted(self.values):
            lines.append(f"{key} = {_format_value(self.values[key])}")
        return "\n".join(lines) + "\n"


def _format_value(value: object) -> str:
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_int(key: str, raw: str, spec: KeySpec) -> int:
    try:
        value = int(raw, 10)
    except ValueError:
        raise ConfigError(f"{key} expects an integer, got {raw!r}") from None
    _check_range(key, value, spec)
    return value


def _parse_float(key: str, raw: str, spec: KeySpec) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"{key} expects a number, got {raw!r}") from None
    if not np.isfinite(value):
        raise ConfigError(f"{key} must be finite, got {raw!r}")
    _check_range(key, value, spec)
    return value


def _check_range(key: str, value: float, spec: KeySpec) -> None:
    if spec.lo is not None:
        if spec.lo_open and value <= spec.lo:
            raise ConfigError(f"{key} must be > {spec.lo}, got {value}")
        if not spec.lo_open and value < spec.lo:
            raise ConfigError(f"{key} must be >= {spec.lo}, got {value}")
    if spec.hi is not None and value > spec.hi:
        raise ConfigError(f"{key} must be <= {spec.hi}, got {value}")


def parse_rho_grid(raw: str) -> tuple[float, ...]:
    """Parse `a:b:step` (inclusive endpoints) or a comma list of floats."""
    raw = raw.strip()
    if ":" in raw:
        parts = raw.split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid must be start:stop:step, got {raw!r}")
        try:
            a, b, step = (float(p) for p in parts)
        except ValueError:
            raise ConfigError(f"grid must be numeric, got {raw!r}") from None
        if step <= 0 or b < a:
            raise ConfigError(f"grid needs stop >= start and step > 0, got {raw!r}")
        count = int(round((b - a) / step)) + 1
        return tuple(float(v) for v in np.linspace(a, a + step * (count - 1), count))
    try:
        return tuple(float(p) for p in raw.split(","))
    except ValueError:
        raise ConfigError(f"expected a comma list of numbers, got {raw!r}") from None


def parse_value(key: str, raw: str) -> object:
    """Validate one raw string against the schema; returns the typed value."""
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key: {key}")
    spec = SCHEMA[key]
    raw = raw.strip()
    if spec.kind == "int":
        return _parse_int(key, raw, spec)
    if spec.kind == "float":
        return _parse_float(key, raw, spec)
    if spec.kind == "enum":
        if raw not in spec.choices:
            raise ConfigError(
                f"{key} must be one of {', '.join(spec.choices)}, got {raw!r}")
        return raw
    if spec.kind == "floatlist":
        values = parse_rho_grid(raw)
        if not values:
            raise ConfigError(f"{key} needs at least one value")
        for v in values:
            _check_range(key, v, spec)
        return values
    if spec.kind == "intlist":
        out = []
        for part in raw.split(","):
            out.append(_parse_int(key, part.strip(), spec))
        return tuple(out)
    raise ConfigError(f"{key} has unhandled kind {spec.kind}")   # pragma: no cover


def parse_config_text(text: str) -> dict[str, str]:
    """Parse grammar lines into raw {key: string} assignments."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected `section.key = value`")
        key, value = body.split("=", 1)
        key = key.strip()
        if key.count(".") != 1 or not all(key.split(".")):
            raise ConfigError(f"line {lineno}: malformed key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        raw[key] = value.strip()
    return raw


def resolve(file_values: dict[str, str] | None = None,
            overrides: dict[str, str] | None = None,
            env: dict[str, str] | None = None) -> Config:
    """Layer defaults < env seed fallback < file < overrides.

    All inputs carry raw strings; every layer is validated. The env
    fallback only touches seed keys that neither file nor overrides set.
    """
    file_values = file_values or {}
    overrides = overrides or {}
    env = os.environ if env is None else env

    for key in list(file_values) + list(overrides):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key: {key}")

    values: dict[str, object] = {k: s.default for k, s in SCHEMA.items()}
    if ENV_SEED in env:
        fallback = env[ENV_SEED]
        for key in _SEED_KEYS:
            values[key] = parse_value(key, fallback)
        values["mi.seeds"] = parse_value("mi.seeds", fallback)
    for layer in (file_values, overrides):
        for key, raw in layer.items():
            values[key] = parse_value(key, raw)
    return Config(values)


def load_config_file(path: str | os.PathLike) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


# bridges from config sections to library objects

def build_world(cfg: Config):
    w = cfg.section("world")
    return make_world(class_count=w["class_count"], per_class=w["per_class"],
                      ambient_dim=w["ambient_dim"], latent_dim=w["latent_dim"],
                      nuisance=w["nuisance"], latent_scale=w["latent_scale"],
                      seed=w["seed"])


def build_train_config(cfg: Config) -> TrainConfig:
    t = cfg.section("train")
    return TrainConfig(regime=t["regime"], epochs=t["epochs"],
                       batch_size=t["batch_size"], lr=t["lr"], seed=t["seed"],
                       augment=t["augment"], eval_every=t["eval_every"],
                       loss=build_loss_config(cfg))


def build_loss_config(cfg: Config) -> LossConfig:
    s = cfg.section("loss")
    return LossConfig(temperature=s["temperature"],
                      uniformity_weight=s["uniformity_weight"],
                      alpha=s["alpha"], neg_policy=s["neg_policy"])


def build_episode_spec(cfg: Config) -> EpisodeSpec:
    e = cfg.section("eval")
    return EpisodeSpec(n_way=e["n_way"], k_shot=e["k_shot"],
                       n_query=e["n_query"], episodes=e["episodes"],
                       seed=e["seed"])


def build_probe_config(cfg: Config) -> ProbeConfig:
    e = cfg.section("eval")
    return ProbeConfig(power=e["power"], max_iter=e["max_iter"], tol=e["tol"])
