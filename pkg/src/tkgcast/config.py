"""Flat key-value configuration.

One `key = value` pair per line; `#` starts a comment; blank lines are
ignored. Every key must be one of the documented defaults below, so typos
fail fast instead of silently falling back.
"""

from __future__ import annotations

from .engine import Hyperparams
from .sampling import SamplingConfig
from .training import TrainingConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    # data
    "data.dir": "data",          # corpus directory with train/valid/test.txt
    "data.time_unit": "1",       # divisor for integer timestamps (24 for hour codes)
    # neighbor sampling
    "sampling.strategy": "exp-weighted",  # uniform|exp-weighted|linear-weighted|last-n
    "sampling.budget": "8",      # max prior edges sampled per node per step
    "sampling.seed": "0",
    # reasoning engine
    "model.steps": "3",          # inference steps L
    "model.prune_k": "32",       # edges kept per pruning pass
    "model.gamma": "0.5",        # self/neighbor mixing ratio
    "model.agg": "sum",          # entity score aggregation: sum|mean
    "model.leaky_slope": "0.01",
    "model.static_dim": "32",
    "model.time_dim": "16",
    # training
    "train.lr": "2e-4",
    "train.batch": "128",
    "train.epochs": "10",
    "train.seed": "0",
    "train.skip_missing_answer": "false",
    # evaluation
    "eval.filter": "time-aware",  # raw|static|time-aware
    "eval.ks": "1,3,10",
    # outputs
    "output.dir": "out",
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_config(path=None):
    """Defaults overridden by the file at `path` (if given)."""
    conf = dict(DEFAULTS)
    if path is None:
        return conf
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if not value:
                raise ConfigError(f"{path}:{lineno}: empty value for {key!r}")
            conf[key] = value
    return conf


def get_int(conf, key):
    try:
        return int(conf[key])
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {conf[key]!r}") from None


def get_float(conf, key):
    try:
        return float(conf[key])
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {conf[key]!r}") from None


def get_bool(conf, key):
    value = conf[key].lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ConfigError(f"{key} must be a boolean, got {conf[key]!r}")


def get_int_list(conf, key):
    try:
        return [int(part) for part in conf[key].split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"{key} must be comma-separated integers") from None


def sampling_config(conf, seed_override=None):
    cfg = SamplingConfig(
        strategy=conf["sampling.strategy"],
        budget=get_int(conf, "sampling.budget"),
        seed=seed_override if seed_override is not None
        else get_int(conf, "sampling.seed"),
    )
    try:
        return cfg.validate()
    except ValueError as err:
        raise ConfigError(str(err)) from None


def hyperparams(conf):
    hp = Hyperparams(
        steps=get_int(conf, "model.steps"),
        prune_k=get_int(conf, "model.prune_k"),
        gamma=get_float(conf, "model.gamma"),
        leaky_slope=get_float(conf, "model.leaky_slope"),
        agg=conf["model.agg"],
    )
    try:
        return hp.validate()
    except ValueError as err:
        raise ConfigError(str(err)) from None


def training_config(conf, seed_override=None):
    cfg = TrainingConfig(
        lr=get_float(conf, "train.lr"),
        batch=get_int(conf, "train.batch"),
        epochs=get_int(conf, "train.epochs"),
        seed=seed_override if seed_override is not None
        else get_int(conf, "train.seed"),
        skip_missing_answer=get_bool(conf, "train.skip_missing_answer"),
    )
    try:
        return cfg.validate()
    except ValueError as err:
        raise ConfigError(str(err)) from None
