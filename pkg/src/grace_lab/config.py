"""Run configuration: a sectioned TOML file with strict, typed keys."""

import dataclasses
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import tomli
import tomli_w

from .assess import IMPLEMENTED_MEASURES
from .errors import ConfigError

STRATEGIES = ("grace", "pure_expansion", "always_compress", "finetune", "replay")


@dataclass(frozen=True)
class StreamSection:
    source: str = "synthetic"  # "synthetic" | "csv"
    total_classes: int = 10
    base: int = 0
    increment: int = 2
    shuffle_seed: int = 1993
    samples_per_class_train: int = 100
    samples_per_class_test: int = 50
    input_dim: int = 2
    cluster_spread: float = 0.5
    radius: float = 3.0
    data_seed: int = 0
    csv_path: str = ""
    csv_label_column: int = -1
    csv_header: bool = False


@dataclass(frozen=True)
class ModelSection:
    hidden_dims: Tuple[int, ...] = (32,)
    feature_dim: int = 8
    seed: int = 0


@dataclass(frozen=True)
class GrowSection:
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 30
    batch_size: int = 32


@dataclass(frozen=True)
class AssessSection:
    measure: str = "effective_rank"
    tau1: float = 0.6
    rho: float = 0.9
    sample_cap: int = 2048
    diagnostics: Tuple[str, ...] = ()
    weight_norm_range: Tuple[float, float] = (0.0, 10.0)
    fisher_range: Tuple[float, float] = (0.0, 1.0)
    fisher_samples: int = 256


@dataclass(frozen=True)
class CompressSection:
    temperature: float = 2.0
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 2.0
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 30
    batch_size: int = 32


@dataclass(frozen=True)
class BufferSection:
    capacity: int = 200


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"


@dataclass(frozen=True)
class RunConfig:
    strategy: str = "grace"
    stream: StreamSection = field(default_factory=StreamSection)
    model: ModelSection = field(default_factory=ModelSection)
    grow: GrowSection = field(default_factory=GrowSection)
    assess: AssessSection = field(default_factory=AssessSection)
    compress: CompressSection = field(default_factory=CompressSection)
    buffer: BufferSection = field(default_factory=BufferSection)
    output: OutputSection = field(default_factory=OutputSection)


SECTIONS = {f.name: f.type for f in dataclasses.fields(RunConfig) if f.name != "strategy"}


def _coerce(value, tp, name):
    origin = typing.get_origin(tp)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name}: expected a list", name)
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], name) for v in value)
        if len(value) != len(args):
            raise ConfigError(f"{name}: expected {len(args)} items", name)
        return tuple(_coerce(v, a, name) for v, a in zip(value, args))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false", name)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer", name)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number", name)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string", name)
        return value
    raise ConfigError(f"{name}: unsupported type {tp}", name)


def _section(cls, raw, prefix):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{prefix}] must be a table", prefix)
    hints = typing.get_type_hints(cls)
    unknown = set(raw) - set(hints)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown key {prefix}.{key}", f"{prefix}.{key}")
    return cls(**{k: _coerce(v, hints[k], f"{prefix}.{k}") for k, v in raw.items()})


def parse_config(raw: dict) -> RunConfig:
    raw = dict(raw)
    kwargs = {}
    if "strategy" in raw:
        kwargs["strategy"] = _coerce(raw.pop("strategy"), str, "strategy")
    for name, cls in SECTIONS.items():
        if name in raw:
            kwargs[name] = _section(cls, raw.pop(name), name)
    if raw:
        key = sorted(raw)[0]
        raise ConfigError(f"unknown key or section {key!r}", key)
    cfg = RunConfig(**kwargs)
    validate(cfg)
    return cfg


def _check(cond, field_name, message):
    if not cond:
        raise ConfigError(f"{field_name}: {message}", field_name)


def validate(cfg: RunConfig) -> None:
    """Field-level checks; raises ConfigError naming the first bad field."""
    _check(cfg.strategy in STRATEGIES, "strategy", f"must be one of {', '.join(STRATEGIES)}")
    s = cfg.stream
    _check(s.source in ("synthetic", "csv"), "stream.source", "must be 'synthetic' or 'csv'")
    _check(s.source != "csv" or s.csv_path, "stream.csv_path", "required when source is 'csv'")
    _check(s.total_classes >= 1, "stream.total_classes", "must be >= 1")
    _check(s.increment >= 1, "stream.increment", "must be >= 1")
    _check(0 <= s.base <= s.total_classes, "stream.base", "must lie in [0, total_classes]")
    _check((s.total_classes - s.base) % s.increment == 0, "stream.increment",
           "classes after the base task must divide evenly into increments")
    _check(s.samples_per_class_train >= 1, "stream.samples_per_class_train", "must be >= 1")
    _check(s.samples_per_class_test >= 1, "stream.samples_per_class_test", "must be >= 1")
    _check(s.input_dim >= 2 or s.source == "csv", "stream.input_dim", "must be >= 2")
    _check(s.cluster_spread >= 0, "stream.cluster_spread", "must be >= 0")
    _check(s.radius > 0, "stream.radius", "must be > 0")
    _check(cfg.model.feature_dim >= 1, "model.feature_dim", "must be >= 1")
    _check(all(h >= 1 for h in cfg.model.hidden_dims), "model.hidden_dims", "entries must be >= 1")
    for name, sec in (("grow", cfg.grow), ("compress", cfg.compress)):
        _check(sec.learning_rate > 0, f"{name}.learning_rate", "must be > 0")
        _check(0 <= sec.momentum < 1, f"{name}.momentum", "must lie in [0, 1)")
        _check(sec.weight_decay >= 0, f"{name}.weight_decay", "must be >= 0")
        _check(sec.epochs >= 0, f"{name}.epochs", "must be >= 0")
        _check(sec.batch_size >= 1, f"{name}.batch_size", "must be >= 1")
    a = cfg.assess
    # 0 forces expansion at every task, values above 1 force compression.
    _check(math.isfinite(a.tau1) and 0 <= a.tau1 <= 2, "assess.tau1", "must lie in [0, 2]")
    _check(0 < a.rho <= 1, "assess.rho", "must lie in (0, 1]")
    _check(a.measure in IMPLEMENTED_MEASURES, "assess.measure", f"must be one of {', '.join(IMPLEMENTED_MEASURES)}")
    _check(all(m in IMPLEMENTED_MEASURES for m in a.diagnostics), "assess.diagnostics",
           f"entries must be among {', '.join(IMPLEMENTED_MEASURES)}")
    _check(a.sample_cap >= 2, "assess.sample_cap", "must be >= 2")
    _check(a.fisher_samples >= 1, "assess.fisher_samples", "must be >= 1")
    _check(a.weight_norm_range[1] > a.weight_norm_range[0], "assess.weight_norm_range", "must be increasing")
    _check(a.fisher_range[1] > a.fisher_range[0], "assess.fisher_range", "must be increasing")
    c = cfg.compress
    _check(c.temperature > 0, "compress.temperature", "must be > 0")
    _check(c.alpha >= 0, "compress.alpha", "must be >= 0")
    _check(c.beta >= 0, "compress.beta", "must be >= 0")
    _check(c.gamma >= 1, "compress.gamma", "must be >= 1")
    _check(cfg.buffer.capacity >= 0, "buffer.capacity", "must be >= 0")


def to_dict(cfg: RunConfig) -> dict:
    def plain(v):
        return list(v) if isinstance(v, tuple) else v

    out = {"strategy": cfg.strategy}
    for name in SECTIONS:
        sec = getattr(cfg, name)
        out[name] = {f.name: plain(getattr(sec, f.name)) for f in dataclasses.fields(sec)}
    return out


def dump_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def loads_config(text: str) -> RunConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None
    return parse_config(raw)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found", "config")
    return loads_config(path.read_text())


def with_overrides(cfg: RunConfig, strategy: Optional[str] = None, seed: Optional[int] = None,
                   tau1: Optional[float] = None, rho: Optional[float] = None, out: Optional[str] = None) -> RunConfig:
    if strategy is not None:
        cfg = dataclasses.replace(cfg, strategy=strategy)
    if seed is not None:
        cfg = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, seed=seed))
    if tau1 is not None:
        cfg = dataclasses.replace(cfg, assess=dataclasses.replace(cfg.assess, tau1=tau1))
    if rho is not None:
        cfg = dataclasses.replace(cfg, assess=dataclasses.replace(cfg.assess, rho=rho))
    if out is not None:
        cfg = dataclasses.replace(cfg, output=dataclasses.replace(cfg.output, dir=out))
    validate(cfg)
    return cfg
