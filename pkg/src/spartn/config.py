"""Run configuration: one INI file with sections fully determines a run.

Sections and keys (all optional, defaults in brackets)::

    [run]      workspace [workspace], name [default], method [spartn],
               seeds [0], n_demos [25], parallelism [1]
    [env]      any EnvConfig field; tuples as comma-separated values
    [augment]  n_aug [16], alpha [0.2], beta [0.003], window [pre-grasp | first,last]
    [dart]     alpha [0.05], beta [0.002]
    [field]    iters, rays_per_step, resolution, lr_density, lr_color, sparsity,
               samples_per_ray, near, far
    [train]    steps, batch, lr, mix_ratio, image_aug, schedule
    [eval]     episodes [100]

Overrides use ``section.key=value``.  ``SPARTN_WORKSPACE`` replaces the
workspace root.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .field import FieldTrainConfig, RenderConfig
from .pipeline import PRE_GRASP, AugmentConfig
from .policy import TrainConfig
from .se3 import NoiseParams
from .sim import EnvConfig

METHODS = ("bc", "dart", "ha", "spartn")
SECTIONS = ("run", "env", "augment", "dart", "field", "train", "eval")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    workspace: Path = Path("workspace")
    name: str = "default"
    method: str = "spartn"
    seeds: tuple = (0,)
    n_demos: int = 25
    parallelism: int = 1
    env: EnvConfig = EnvConfig()
    augment: AugmentConfig = AugmentConfig()
    dart: NoiseParams = NoiseParams(0.05, 0.002)
    field: FieldTrainConfig = FieldTrainConfig()
    train: TrainConfig = TrainConfig()
    episodes: int = 100

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {', '.join(METHODS)}, got {self.method!r}")
        if self.n_demos < 1 or self.episodes < 1 or self.parallelism < 1:
            raise ConfigError("n_demos, episodes and parallelism must be >= 1")

    @property
    def root(self) -> Path:
        return Path(self.workspace) / self.name

    def seed_dir(self, seed: int) -> Path:
        return self.root / f"seed_{seed}"


def _parse_value(text: str, like):
    text = text.strip()
    if isinstance(like, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        items = [x.strip() for x in text.split(",") if x.strip()]
        if like and isinstance(like[0], str):
            return tuple(items)
        return tuple(float(x) for x in items)
    return text


def _update(obj, values: dict, section: str):
    known = {f.name: f for f in fields(obj)}
    kw = {}
    for k, v in values.items():
        if k not in known:
            raise ConfigError(f"unknown key {section}.{k}")
        kw[k] = _parse_value(v, getattr(obj, k))
    try:
        return replace(obj, **kw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def parse_overrides(items) -> dict:
    out: dict = {}
    for item in items or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        section, name = key.strip().split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"unknown section {section!r}")
        out.setdefault(section, {})[name.strip()] = value
    return out


def load_config(path=None, overrides=(), environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    cp = configparser.ConfigParser()
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file not found: {path}")
        cp.read(path)
    raw = {s: dict(cp[s]) for s in cp.sections()}
    for s in raw:
        if s not in SECTIONS:
            raise ConfigError(f"unknown section [{s}]")
    for s, kv in parse_overrides(overrides).items():
        raw.setdefault(s, {}).update(kv)

    run = dict(raw.get("run", {}))
    kw: dict = {}
    if "workspace" in run:
        kw["workspace"] = Path(run.pop("workspace"))
    if "seeds" in run:
        kw["seeds"] = tuple(int(x) for x in run.pop("seeds").split(",") if x.strip())
    for k in ("name", "method"):
        if k in run:
            kw[k] = run.pop(k).strip()
    for k in ("n_demos", "parallelism"):
        if k in run:
            kw[k] = int(run.pop(k))
    if run:
        raise ConfigError(f"unknown key run.{next(iter(run))}")
    if environ.get("SPARTN_WORKSPACE"):
        kw["workspace"] = Path(environ["SPARTN_WORKSPACE"])

    kw["env"] = _update(EnvConfig(), raw.get("env", {}), "env")

    aug = dict(raw.get("augment", {}))
    noise = NoiseParams(float(aug.pop("alpha", 0.2)), float(aug.pop("beta", 0.003)))
    window = aug.pop("window", PRE_GRASP).strip()
    if window != PRE_GRASP:
        try:
            a, b = (int(x) for x in window.split(","))
        except ValueError:
            raise ConfigError(f"augment.window must be {PRE_GRASP!r} or first,last") from None
        window = (a, b)
    n_aug = int(aug.pop("n_aug", 16))
    if aug:
        raise ConfigError(f"unknown key augment.{next(iter(aug))}")
    try:
        kw["augment"] = AugmentConfig(n_aug, noise, window)
    except ValueError as exc:
        raise ConfigError(f"[augment] {exc}") from None

    dart = dict(raw.get("dart", {}))
    kw["dart"] = NoiseParams(float(dart.pop("alpha", 0.05)), float(dart.pop("beta", 0.002)))
    if dart:
        raise ConfigError(f"unknown key dart.{next(iter(dart))}")

    fld = dict(raw.get("field", {}))
    render_keys = {f.name for f in fields(RenderConfig)}
    rc = _update(RenderConfig(), {k: fld.pop(k) for k in list(fld) if k in render_keys}, "field")
    kw["field"] = replace(_update(FieldTrainConfig(), fld, "field"), render=rc)

    kw["train"] = _update(TrainConfig(), raw.get("train", {}), "train")

    ev = dict(raw.get("eval", {}))
    if "episodes" in ev:
        kw["episodes"] = int(ev.pop("episodes"))
    if ev:
        raise ConfigError(f"unknown key eval.{next(iter(ev))}")
    return RunConfig(**kw)


def echo(cfg: RunConfig) -> dict:
    """JSON-ready view of every setting, for logs and manifests."""
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in fields(v)}
        if isinstance(v, (tuple, list)):
            return [conv(x) for x in v]
        if isinstance(v, Path):
            return str(v)
        return v
    return conv(cfg)
