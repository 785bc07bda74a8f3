"""Run configuration: a small YAML tree with defaults and a stable hash."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .errors import ValidationError


@dataclass
class AutoLabelConfig:
    cos_low: float = 0.4
    cos_high: float = 0.9
    jaccard_min: float = 0.5


@dataclass
class SamplingConfig:
    lo: float = 0.4
    hi: float = 0.9
    bin_width: float = 0.05
    per_bin: int = 60
    seed: int = 0
    score_source: str = "cosine"


@dataclass
class MaceSettings:
    max_iters: int = 200
    tol: float = 1e-6
    restarts: int = 5
    smoothing: float = 0.1
    seed: int = 0
    drop_fraction: float = 0.1
    outlier_std: float = 1.2


@dataclass
class ClassifierConfig:
    hash_dim: int = 1 << 18
    l2_penalty: float = 1e-4
    max_epochs: int = 200
    tol: float = 1e-4
    seed: int = 0


@dataclass
class RetrievalConfig:
    k1: float = 1.2
    b: float = 0.75
    mrr_variant: str = "all_gold"


@dataclass
class RegressionConfig:
    min_group_size: int = 31
    lambda_log_lo: float = -12.0
    lambda_log_hi: float = 12.0
    tol: float = 1e-8


@dataclass
class SplitConfig:
    train: float = 0.8
    dev: float = 0.1
    test: float = 0.1
    seed: int = 0


@dataclass
class ScoringConfig:
    match_threshold: float = 3.0
    hash_dim: int = 4096


@dataclass
class Config:
    auto_label: AutoLabelConfig = field(default_factory=AutoLabelConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    mace: MaceSettings = field(default_factory=MaceSettings)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    regression: RegressionConfig = field(default_factory=RegressionConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)


_SECTION_TYPES = {f.name: f.default_factory for f in fields(Config)}


def _coerce(section: str, cls, mapping: dict):
    allowed = {f.name: f.type for f in fields(cls)}
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ValidationError(
            f"config section {section!r}: unknown keys {sorted(unknown)}")
    out = cls()
    for key, value in mapping.items():
        current = getattr(out, key)
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise ValidationError(f"config {section}.{key}: expected bool")
        elif isinstance(current, int) and not isinstance(value, bool) and isinstance(value, int):
            pass
        elif isinstance(current, float):
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ValidationError(f"config {section}.{key}: expected number")
            value = float(value)
        elif isinstance(current, int):
            raise ValidationError(f"config {section}.{key}: expected integer")
        elif isinstance(current, str):
            if not isinstance(value, str):
                raise ValidationError(f"config {section}.{key}: expected string")
        setattr(out, key, value)
    return out


def _validate(config: Config) -> None:
    al = config.auto_label
    if not (0.0 <= al.cos_low <= al.cos_high <= 1.0):
        raise ValidationError("auto_label: need 0 <= cos_low <= cos_high <= 1")
    if not 0.0 <= al.jaccard_min <= 1.0:
        raise ValidationError("auto_label.jaccard_min must be in [0, 1]")
    sm = config.sampling
    if sm.bin_width <= 0 or sm.hi <= sm.lo or sm.per_bin < 1:
        raise ValidationError("sampling: need bin_width > 0, hi > lo, per_bin >= 1")
    if sm.score_source not in ("cosine", "external_model"):
        raise ValidationError(f"sampling.score_source: {sm.score_source!r}")
    mc = config.mace
    if mc.max_iters < 1 or mc.restarts < 1 or mc.tol <= 0 or mc.smoothing < 0:
        raise ValidationError("mace: iters/restarts >= 1, tol > 0, smoothing >= 0")
    if not 0.0 <= mc.drop_fraction < 1.0:
        raise ValidationError("mace.drop_fraction must be in [0, 1)")
    rt = config.retrieval
    if rt.k1 < 0 or not 0.0 <= rt.b <= 1.0:
        raise ValidationError("retrieval: need k1 >= 0 and 0 <= b <= 1")
    if rt.mrr_variant not in ("all_gold", "first_relevant"):
        raise ValidationError(f"retrieval.mrr_variant: {rt.mrr_variant!r}")
    rg = config.regression
    if rg.min_group_size < 1 or rg.lambda_log_hi <= rg.lambda_log_lo or rg.tol <= 0:
        raise ValidationError("regression: bad min_group_size/range/tol")
    sp = config.split
    total = sp.train + sp.dev + sp.test
    if min(sp.train, sp.dev, sp.test) < 0 or abs(total - 1.0) > 1e-9:
        raise ValidationError("split ratios must be non-negative and sum to 1")
    sc = config.scoring
    if not 1.0 <= sc.match_threshold <= 5.0:
        raise ValidationError("scoring.match_threshold must be in [1, 5]")
    if config.classifier.hash_dim < 2 or sc.hash_dim < 2:
        raise ValidationError("hash_dim must be >= 2")


def load_config(path: str | Path | None = None) -> Config:
    """Parse a YAML config file; None or a missing section means defaults."""
    if path is None:
        config = Config()
        _validate(config)
        return config
    raw = Path(path).read_text(encoding="utf-8")
    data = yaml.safe_load(raw)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValidationError(f"config root must be a mapping, got {type(data).__name__}")
    unknown = set(data) - set(_SECTION_TYPES)
    if unknown:
        raise ValidationError(f"config: unknown sections {sorted(unknown)}")
    kwargs = {}
    for name, factory in _SECTION_TYPES.items():
        if name in data:
            section = data[name]
            if not isinstance(section, dict):
                raise ValidationError(f"config section {name!r} must be a mapping")
            kwargs[name] = _coerce(name, type(factory()), section)
    config = Config(**kwargs)
    _validate(config)
    return config


def config_hash(config: Config) -> str:
    """sha256 over the canonical JSON form; stable across key order."""
    if not is_dataclass(config):
        raise ValidationError("config_hash expects a Config")
    canon = json.dumps(asdict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def dump_config(config: Config) -> str:
    return yaml.safe_dump(asdict(config), sort_keys=True)
