"""Run configuration: plain key=value text files with '#' comments.

Unknown keys are errors, as are out-of-range values; every field has a
default so a config file only needs to state what differs from it.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .optimizer import (
    BLOCKS,
    RULES,
    BlockPolicy,
    OptimizerPolicy,
    SsdSvdMode,
    StepSchedule,
)


class ConfigError(ValueError):
    """Configuration file or value is invalid."""


@dataclass
class RunConfig:
    # model
    family: str = "bernoulli"
    n_hidden: int = 25
    covariance: str = "diagonal_log"
    init_checkpoint: str = ""
    # data
    data: str = "synthetic"  # synthetic | idx | matrix
    train_path: str = ""
    test_path: str = ""
    binarize: str = "none"  # none | threshold | stochastic
    binarize_threshold: float = 0.5
    synthetic_visible: int = 100
    synthetic_hidden: int = 25
    synthetic_train: int = 4000
    synthetic_test: int = 1000
    synthetic_burn_in: int = 1000
    # training loop
    batch_size: int = 100
    cd_k: int = 1
    cd_mode: str = "cd"  # cd | pcd
    iterations: int = 10000
    eval_interval: int = 250
    seed: int = 0
    out_dir: str = "run"
    deterministic: bool = False
    # optimizer
    rule_w: str = "sgd"
    rule_b: str = "sgd"
    rule_a: str = "sgd"
    rule_cov: str = "sgd"
    step_sgd: float = 0.05
    step_ssd: float = 0.001
    step_w: float = 0.0  # 0 = inherit from the rule's step
    step_b: float = 0.0
    step_a: float = 0.0
    step_cov: float = 0.0
    schedule: str = "fixed"  # fixed | exponential
    decay: float = 0.9
    decay_period: int = 1000
    momentum: float = 0.9
    weight_cap: float = 0.0  # 0 = no cap
    svd_mode: str = "exact"  # exact | randomized
    svd_rank: int = 10
    svd_oversample: int = 10


_BOOL_WORDS = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _parse_value(name: str, kind: type, raw: str):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() not in _BOOL_WORDS:
                raise ValueError(f"not a boolean: {raw!r}")
            return _BOOL_WORDS[raw.lower()]
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {exc}") from exc


def parse_config(text: str) -> RunConfig:
    """Parse key=value lines into a validated RunConfig."""
    types = {f.name: f.type for f in fields(RunConfig)}
    # dataclass field types arrive as strings under `from __future__ import annotations`
    kinds = {"str": str, "int": int, "float": float, "bool": bool}
    cfg = RunConfig()
    seen = set()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw_line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        setattr(cfg, key, _parse_value(key, kinds[types[key]], value))
    validate_config(cfg)
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def validate_config(cfg: RunConfig) -> None:
    def require(cond: bool, msg: str):
        if not cond:
            raise ConfigError(msg)

    require(cfg.family in ("bernoulli", "gaussian"), f"family must be bernoulli|gaussian, got {cfg.family!r}")
    require(cfg.covariance in ("identity", "isotropic", "diagonal_log", "full"),
            f"unknown covariance {cfg.covariance!r}")
    require(cfg.data in ("synthetic", "idx", "matrix"), f"unknown data source {cfg.data!r}")
    if cfg.data != "synthetic":
        require(bool(cfg.train_path), f"data={cfg.data} requires train_path")
    require(cfg.binarize in ("none", "threshold", "stochastic"), f"unknown binarize mode {cfg.binarize!r}")
    require(0.0 <= cfg.binarize_threshold <= 1.0, "binarize_threshold must be in [0, 1]")
    for name in ("n_hidden", "synthetic_visible", "synthetic_hidden", "synthetic_train",
                 "synthetic_test", "batch_size", "cd_k", "eval_interval", "decay_period",
                 "svd_rank"):
        require(getattr(cfg, name) >= 1, f"{name} must be >= 1")
    require(cfg.synthetic_burn_in >= 0, "synthetic_burn_in must be >= 0")
    require(cfg.iterations >= 0, "iterations must be >= 0")
    require(cfg.svd_oversample >= 0, "svd_oversample must be >= 0")
    require(cfg.seed >= 0, "seed must be >= 0")
    require(cfg.cd_mode in ("cd", "pcd"), f"cd_mode must be cd|pcd, got {cfg.cd_mode!r}")
    for blk in BLOCKS:
        rule = getattr(cfg, f"rule_{blk}")
        require(rule in RULES, f"rule_{blk} must be one of {RULES}, got {rule!r}")
        require(getattr(cfg, f"step_{blk}") >= 0.0, f"step_{blk} must be >= 0 (0 inherits)")
    require(cfg.step_sgd > 0.0, "step_sgd must be > 0")
    require(cfg.step_ssd > 0.0, "step_ssd must be > 0")
    require(cfg.schedule in ("fixed", "exponential"), f"unknown schedule {cfg.schedule!r}")
    require(0.0 < cfg.decay <= 1.0, "decay must be in (0, 1]")
    require(0.0 <= cfg.momentum < 1.0, "momentum must be in [0, 1)")
    require(cfg.weight_cap >= 0.0, "weight_cap must be >= 0 (0 = none)")
    require(cfg.svd_mode in ("exact", "randomized"), f"unknown svd_mode {cfg.svd_mode!r}")


def _block_policy(cfg: RunConfig, block: str) -> BlockPolicy:
    rule = getattr(cfg, f"rule_{block}")
    override = getattr(cfg, f"step_{block}")
    if override > 0.0:
        base = override
    elif rule == "ssd":
        base = cfg.step_ssd
    else:
        base = cfg.step_sgd
    sched = StepSchedule(base, cfg.schedule, cfg.decay, cfg.decay_period)
    mom = cfg.momentum if rule == "nesterov_sgd" else 0.0
    return BlockPolicy(rule, sched, mom)


def build_policy(cfg: RunConfig) -> OptimizerPolicy:
    """Materialize the per-block optimizer policy from a config."""
    return OptimizerPolicy(
        w=_block_policy(cfg, "w"),
        b=_block_policy(cfg, "b"),
        a=_block_policy(cfg, "a"),
        cov=_block_policy(cfg, "cov"),
        svd_mode=SsdSvdMode(cfg.svd_mode, cfg.svd_rank, cfg.svd_oversample),
        weight_cap=cfg.weight_cap if cfg.weight_cap > 0.0 else None,
    )


def config_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Copy with overrides (used for CLI --seed / --out / --deterministic)."""
    clean = {k: v for k, v in overrides.items() if v is not None}
    out = replace(cfg, **clean)
    validate_config(out)
    return out
