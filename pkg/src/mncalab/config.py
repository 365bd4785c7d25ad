"""Experiment configuration.

One YAML file drives every subcommand. Top-level keys are the model
hyperparameters (lower-snake-case, one key per knob); task-specific
settings live in optional blocks named after the task (tissue, image,
abc, perturb, sweep). Unknown keys are rejected rather than ignored so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .inference import STAT_KINDS
from .model import VARIANTS
from .perturb import KINDS as PERTURB_KINDS


class ConfigError(Exception):
    """Invalid experiment config; carries the offending field and line."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        parts = []
        if field:
            parts.append(f"{field}: ")
        parts.append(message)
        if line is not None:
            parts.append(f" (line {line})")
        super().__init__("".join(parts))


@dataclass
class TissueBlock:
    """Growth-simulation task: cohort shape plus sequence-training knobs."""

    grid_size: int = 50
    n_steps: int = 100
    n_realizations: int = 50
    params: str = "default"  # default | minimal
    window: int = 4
    tau: int = 1
    batch_size: int = 8


@dataclass
class ImageBlock:
    """Image morphogenesis task: target source and pool-training knobs."""

    target: str = "synthetic"  # path to an image file, or the built-in target
    target_size: int = 40
    pad_px: int = 0
    pad_value: float = 1.0
    pool_size: int = 1000
    batch_size: int = 8
    n_min: int = 30
    n_max: int = 50


@dataclass
class AbcBlock:
    """Rejection-sampling posterior over simulator parameters."""

    statistic: str = "proportions"  # proportions | neighborhood | correlation
    n_particles: int = 500
    epsilon: float | None = None  # None: accept the best `quantile` fraction
    quantile: float = 0.1
    n_realizations: int = 1


@dataclass
class PerturbBlock:
    """Damage-recovery harness settings."""

    kind: str = "chunk"  # chunk | noise | sparse
    side: int = 5
    rho: float = 0.05
    sigma: float = 1.0
    count: int = 100
    visible_only: bool = False
    repeats: int = 50
    steps: int = 100
    grow_steps: int = 50  # rollout length used to grow the pre-damage state


@dataclass
class SweepBlock:
    """Rule-count sweep on the growth task."""

    rule_counts: tuple[int, ...] = (1, 2, 5)
    repeats: int = 1
    n_sequences: int = 4


@dataclass
class ExperimentConfig:
    """Model hyperparameters plus optional task blocks.

    Every field has a documented default except `variant`, which must be
    set explicitly. `seed: null` (or absent) means the run generates a
    seed and records it in the run manifest.
    """

    variant: str
    channels: int = 16
    hidden_dim: int = 128
    rules: int = 1
    learning_rate: float = 1e-3
    epochs: int = 100
    residual: bool = True
    dropout: float = 0.0
    milestones: tuple[int, ...] = ()
    gamma: float = 0.1
    filters: tuple[str, ...] = ("grad_x", "grad_y")
    seed: int | None = None
    tissue: TissueBlock | None = None
    image: ImageBlock | None = None
    abc: AbcBlock | None = None
    perturb: PerturbBlock | None = None
    sweep: SweepBlock | None = None


_BLOCKS = (TissueBlock, ImageBlock, AbcBlock, PerturbBlock, SweepBlock)


def _find_line(text: str, key: str) -> int | None:
    """Best-effort line lookup for a mapping key in the raw YAML text."""
    pat = re.compile(rf"^\s*{re.escape(key)}\s*:", re.MULTILINE)
    m = pat.search(text)
    if m is None:
        return None
    return text.count("\n", 0, m.start()) + 1


def _is_optional(hint):
    origin = typing.get_origin(hint)
    return origin in (typing.Union, types.UnionType) and type(None) in typing.get_args(hint)


def _strip_optional(hint):
    args = [a for a in typing.get_args(hint) if a is not type(None)]
    return args[0]


def _coerce(value, hint, path: str, text: str):
    line = _find_line(text, path.split(".")[-1])
    if _is_optional(hint):
        if value is None:
            return None
        hint = _strip_optional(hint)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("expected an integer", field=path, line=line)
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("expected a number", field=path, line=line)
        return float(value)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError("expected true or false", field=path, line=line)
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError("expected a string", field=path, line=line)
        return value
    origin = typing.get_origin(hint)
    if origin is tuple:
        item = typing.get_args(hint)[0]
        if not isinstance(value, (list, tuple)):
            raise ConfigError("expected a list", field=path, line=line)
        return tuple(_coerce(v, item, path, text) for v in value)
    if hint in _BLOCKS:
        if not isinstance(value, dict):
            raise ConfigError("expected a mapping", field=path, line=line)
        return _build(hint, value, path, text)
    raise AssertionError(f"unhandled config field type {hint!r} at {path}")


def _build(cls, data: dict, prefix: str, text: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    out = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in names:
            raise ConfigError("unknown key", field=path, line=_find_line(text, str(key)))
        out[key] = _coerce(value, hints[key], path, text)
    return cls(**out)


def _check(cond: bool, path: str, message: str, text: str = ""):
    if not cond:
        raise ConfigError(message, field=path, line=_find_line(text, path.split(".")[-1]))


def validate_config(cfg: ExperimentConfig, text: str = ""):
    c = lambda cond, path, msg: _check(cond, path, msg, text)
    c(cfg.variant in VARIANTS, "variant", f"must be one of {', '.join(VARIANTS)}")
    c(cfg.channels >= 1, "channels", "must be >= 1")
    c(cfg.hidden_dim >= 1, "hidden_dim", "must be >= 1")
    c(cfg.rules >= 1, "rules", "must be >= 1")
    if cfg.variant in ("nca", "gca"):
        c(cfg.rules == 1, "rules", f"variant {cfg.variant} uses exactly one rule")
    c(cfg.learning_rate > 0, "learning_rate", "must be > 0")
    c(cfg.epochs >= 1, "epochs", "must be >= 1")
    c(0.0 <= cfg.dropout < 1.0, "dropout", "must lie in [0, 1)")
    c(0.0 < cfg.gamma <= 1.0, "gamma", "must lie in (0, 1]")
    ms = cfg.milestones
    c(all(m >= 1 for m in ms), "milestones", "must be positive epochs")
    c(all(b > a for a, b in zip(ms, ms[1:])), "milestones", "must be strictly increasing")
    c(tuple(cfg.filters) == ("grad_x", "grad_y"), "filters",
      "only the fixed gradient filter pair [grad_x, grad_y] is supported")
    c(cfg.seed is None or cfg.seed >= 0, "seed", "must be >= 0")

    if cfg.tissue is not None:
        t = cfg.tissue
        c(t.grid_size >= 3, "tissue.grid_size", "must be >= 3")
        c(t.n_steps >= 1, "tissue.n_steps", "must be >= 1")
        c(t.n_realizations >= 1, "tissue.n_realizations", "must be >= 1")
        c(t.params in ("default", "minimal"), "tissue.params", "must be default or minimal")
        c(t.tau >= 1, "tissue.tau", "must be >= 1")
        c(t.window >= t.tau, "tissue.window", "must cover at least one tau interval")
        c(t.batch_size >= 1, "tissue.batch_size", "must be >= 1")
    if cfg.image is not None:
        i = cfg.image
        c(bool(i.target), "image.target", "must name a file or the synthetic target")
        c(i.target_size >= 4, "image.target_size", "must be >= 4")
        c(i.pad_px >= 0, "image.pad_px", "must be >= 0")
        c(i.pool_size >= 1, "image.pool_size", "must be >= 1")
        c(i.batch_size >= 1, "image.batch_size", "must be >= 1")
        c(1 <= i.n_min <= i.n_max, "image.n_min", "need 1 <= n_min <= n_max")
    if cfg.abc is not None:
        a = cfg.abc
        c(a.statistic in STAT_KINDS, "abc.statistic",
          f"must be one of {', '.join(STAT_KINDS)}")
        c(a.n_particles >= 1, "abc.n_particles", "must be >= 1")
        c(a.epsilon is None or a.epsilon > 0, "abc.epsilon", "must be > 0 when set")
        c(0.0 < a.quantile <= 1.0, "abc.quantile", "must lie in (0, 1]")
        c(a.n_realizations >= 1, "abc.n_realizations", "must be >= 1")
    if cfg.perturb is not None:
        p = cfg.perturb
        c(p.kind in PERTURB_KINDS, "perturb.kind",
          f"must be one of {', '.join(PERTURB_KINDS)}")
        c(p.side >= 0, "perturb.side", "must be >= 0")
        c(0.0 < p.rho <= 1.0, "perturb.rho", "must lie in (0, 1]")
        c(p.sigma > 0, "perturb.sigma", "must be > 0")
        c(p.count >= 0, "perturb.count", "must be >= 0")
        c(p.repeats >= 1, "perturb.repeats", "must be >= 1")
        c(p.steps >= 1, "perturb.steps", "must be >= 1")
        c(p.grow_steps >= 1, "perturb.grow_steps", "must be >= 1")
    if cfg.sweep is not None:
        s = cfg.sweep
        c(len(s.rule_counts) > 0, "sweep.rule_counts", "must be nonempty")
        c(all(k >= 1 for k in s.rule_counts), "sweep.rule_counts", "counts must be >= 1")
        c(s.repeats >= 1, "sweep.repeats", "must be >= 1")
        c(s.n_sequences >= 1, "sweep.n_sequences", "must be >= 1")


def config_from_dict(data: dict, text: str = "") -> ExperimentConfig:
    if "variant" not in data:
        raise ConfigError("missing required field", field="variant",
                          line=_find_line(text, "variant"))
    cfg = _build(ExperimentConfig, data, "", text)
    validate_config(cfg, text)
    return cfg


def parse_config(path) -> ExperimentConfig:
    """Read and validate a YAML experiment config."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"not valid YAML: {e}", line=line) from e
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping of keys to values")
    return config_from_dict(data, text)


def config_as_dict(cfg: ExperimentConfig) -> dict:
    """Plain-JSON form (tuples as lists) for manifests and checkpoints."""

    def plain(x):
        if isinstance(x, tuple):
            return [plain(v) for v in x]
        if isinstance(x, dict):
            return {k: plain(v) for k, v in x.items()}
        return x

    return plain(dataclasses.asdict(cfg))


def config_digest(cfg: ExperimentConfig) -> str:
    """Hash of the fully-resolved config; reruns compare this, not the file."""
    blob = json.dumps(config_as_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
