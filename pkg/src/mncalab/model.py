"""Per-pixel update networks for cellular automata.

Four variants share one body: a two-layer 1x1 network applied to Sobel
perception features at every pixel.

- ``nca``         deterministic residual/replacement update
- ``gca``         the network emits mean and log-variance; the update is a
                  reparameterized Gaussian sample
- ``mnca``        K rule networks; a selector network (reading the raw cell
                  state only) picks one rule per pixel per step
- ``mnca_noise``  mixture plus one intrinsic N(0,1) scalar fed to the chosen
                  rule's second layer

Rule choice during training uses straight-through Gumbel-Softmax so gradients
flow through the soft selection; at inference it is a hard categorical draw.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .rng import RngStream, sample_categorical_field
from .tensor import NumericalDivergenceError, ParamSet, Tensor

VARIANTS = ("nca", "gca", "mnca", "mnca_noise")

# rng purposes inside one step
_U_GUMBEL, _U_SELECT, _U_NOISE, _U_DROPOUT, _U_EPS = 0, 1, 2, 3, 4
# rng slot for selector init, clear of any rule index
_SELECTOR_SLOT = 1 << 32


@dataclass
class RuleNet:
    """weights of one two-layer per-pixel network"""

    w1: Tensor  # [hidden, in_dim]
    b1: Tensor  # [hidden]
    w2: Tensor  # [out_dim, hidden + noise_dim]
    b2: Tensor  # [out_dim]
    noise_dim: int = 0


@dataclass
class SelectorNet:
    """same body as a rule, but reads the raw cell state and emits K logits"""

    v1: Tensor  # [hidden, channels]
    c1: Tensor  # [hidden]
    v2: Tensor  # [n_rules, hidden]
    c2: Tensor  # [n_rules]


@dataclass
class StepOptions:
    selection_mode: str = "sample"  # sample | argmax | soft
    steering: np.ndarray | None = None  # K nonnegative multipliers
    train_mode: bool = False
    gumbel_temperature: float = 1.0
    gca_zero_sigma: bool = False  # test hook: collapses the Gaussian to its mean

    def validate(self, n_rules: int):
        if self.selection_mode not in ("sample", "argmax", "soft"):
            raise ValueError(f"unknown selection_mode {self.selection_mode!r}")
        if self.gumbel_temperature <= 0:
            raise ValueError("gumbel_temperature must be positive")
        if self.steering is not None:
            s = np.asarray(self.steering, dtype=np.float64)
            if s.shape != (n_rules,):
                raise ValueError(f"steering needs {n_rules} multipliers, got shape {s.shape}")
            if np.any(s < 0):
                raise ValueError("steering multipliers must be nonnegative")
            if not s.any():
                raise ValueError("steering multipliers must not all be zero")


@dataclass
class StepInfo:
    """per-step diagnostics: which rule fired where, and what was injected"""

    assignment: np.ndarray | None = None  # [..., H, W] int rule ids
    probs: np.ndarray | None = None  # [..., K, H, W] selector output
    noise: np.ndarray | None = None  # [..., 1, H, W] intrinsic noise
    dropout_mask: np.ndarray | None = None  # [..., 1, H, W] 1 = updated


def _glorot(rng: RngStream, shape) -> np.ndarray:
    fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return (rng.uniform(shape) * 2.0 - 1.0).astype(np.float32) * np.float32(limit)


class AutomatonModel:
    def __init__(
        self,
        variant: str,
        channels: int,
        hidden_dim: int,
        rules: list[RuleNet],
        selector: SelectorNet | None,
        residual: bool = True,
        dropout: float = 0.0,
    ):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        if not 0.0 <= dropout <= 1.0:
            raise ValueError("dropout must lie in [0, 1]")
        if variant in ("nca", "gca") and len(rules) != 1:
            raise ValueError(f"{variant} uses exactly one rule")
        if variant in ("mnca", "mnca_noise") and selector is None:
            raise ValueError("mixture variants need a selector")
        self.variant = variant
        self.channels = channels
        self.hidden_dim = hidden_dim
        self.rules = rules
        self.selector = selector
        self.residual = bool(residual)
        self.dropout = float(dropout)

    @property
    def n_rules(self) -> int:
        return len(self.rules)

    @property
    def has_noise(self) -> bool:
        return self.variant == "mnca_noise"

    @classmethod
    def create(
        cls,
        variant: str,
        channels: int,
        hidden_dim: int,
        n_rules: int = 1,
        residual: bool = True,
        dropout: float = 0.0,
        rng: RngStream | None = None,
    ) -> "AutomatonModel":
        if channels < 1 or hidden_dim < 1 or n_rules < 1:
            raise ValueError("channels, hidden_dim and n_rules must be positive")
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        rng = rng if rng is not None else RngStream(0)
        in_dim = 3 * channels
        out_dim = 2 * channels if variant == "gca" else channels
        noise_dim = 1 if variant == "mnca_noise" else 0
        if variant in ("nca", "gca") and n_rules != 1:
            raise ValueError(f"{variant} uses exactly one rule")

        rules = []
        for k in range(n_rules):
            r = rng.at(k)
            rules.append(
                RuleNet(
                    w1=Tensor(_glorot(r.at(0), (hidden_dim, in_dim))),
                    b1=Tensor(np.zeros(hidden_dim, dtype=np.float32)),
                    w2=Tensor(np.zeros((out_dim, hidden_dim + noise_dim), dtype=np.float32)),
                    b2=Tensor(np.zeros(out_dim, dtype=np.float32)),
                    noise_dim=noise_dim,
                )
            )
        selector = None
        if variant in ("mnca", "mnca_noise"):
            s = rng.at(_SELECTOR_SLOT)
            selector = SelectorNet(
                v1=Tensor(_glorot(s.at(0), (hidden_dim, channels))),
                c1=Tensor(np.zeros(hidden_dim, dtype=np.float32)),
                v2=Tensor(np.zeros((n_rules, hidden_dim), dtype=np.float32)),
                c2=Tensor(np.zeros(n_rules, dtype=np.float32)),
            )
        return cls(variant, channels, hidden_dim, rules, selector, residual, dropout)

    def parameters(self) -> dict[str, Tensor]:
        """Canonical parameter order: per rule w1,b1,w2,b2 then selector."""
        out: dict[str, Tensor] = {}
        for k, r in enumerate(self.rules):
            out[f"rule{k}.w1"] = r.w1
            out[f"rule{k}.b1"] = r.b1
            out[f"rule{k}.w2"] = r.w2
            out[f"rule{k}.b2"] = r.b2
        if self.selector is not None:
            out["selector.v1"] = self.selector.v1
            out["selector.c1"] = self.selector.c1
            out["selector.v2"] = self.selector.v2
            out["selector.c2"] = self.selector.c2
        return out

    def param_set(self) -> ParamSet:
        return ParamSet(self.parameters())

    def astype(self, dtype) -> "AutomatonModel":
        """Same weights at another precision (float64 checker runs)."""
        rules = [
            RuleNet(
                Tensor(r.w1.data, dtype=dtype),
                Tensor(r.b1.data, dtype=dtype),
                Tensor(r.w2.data, dtype=dtype),
                Tensor(r.b2.data, dtype=dtype),
                r.noise_dim,
            )
            for r in self.rules
        ]
        sel = None
        if self.selector is not None:
            sel = SelectorNet(
                Tensor(self.selector.v1.data, dtype=dtype),
                Tensor(self.selector.c1.data, dtype=dtype),
                Tensor(self.selector.v2.data, dtype=dtype),
                Tensor(self.selector.c2.data, dtype=dtype),
            )
        return AutomatonModel(
            self.variant, self.channels, self.hidden_dim, rules, sel, self.residual, self.dropout
        )


# -- op-level pieces ---------------------------------------------------------


def rule_delta(rule: RuleNet, features: Tensor, noise: Tensor | None = None) -> Tensor:
    """Two-layer per-pixel network; optional noise scalar enters layer 2."""
    h = T.relu(T.dense_per_pixel(features, rule.w1, rule.b1))
    if rule.noise_dim:
        if noise is None:
            raise ValueError("rule expects an intrinsic noise channel")
        h = T.concat_channels([h, noise], axis=-3)
    elif noise is not None:
        raise ValueError("rule does not take noise")
    return T.dense_per_pixel(h, rule.w2, rule.b2)


def _selector_logits(selector: SelectorNet, grid: Tensor) -> Tensor:
    h = T.relu(T.dense_per_pixel(grid, selector.v1, selector.c1))
    return T.dense_per_pixel(h, selector.v2, selector.c2)


def _apply_steering(probs: Tensor, steering) -> Tensor:
    s = np.asarray(steering, dtype=probs.dtype).reshape(-1, 1, 1)
    if s.shape[0] != probs.data.shape[-3]:
        raise ValueError("steering length must equal the number of rules")
    if np.any(s < 0) or not s.any():
        raise ValueError("steering multipliers must be nonnegative and not all zero")
    steered = T.mul(probs, Tensor(s))
    total = T.sum_axis(steered, axis=-3, keepdims=True)
    if np.any(total.data == 0):
        raise ValueError("steering removed all probability mass at some pixel")
    return T.div(steered, total)


def select_probs(selector: SelectorNet, grid: Tensor, steering: np.ndarray | None = None) -> Tensor:
    """Per-pixel rule probabilities from the raw cell state.

    Steering multiplies the probabilities by nonnegative per-rule factors and
    renormalizes; a pixel whose steered mass vanishes entirely is an error.
    """
    if not isinstance(grid, Tensor):
        grid = Tensor(grid)
    probs = T.softmax(_selector_logits(selector, grid), axis=-3)
    if steering is None:
        return probs
    return _apply_steering(probs, steering)


def gumbel_softmax(logits: Tensor, temperature: float, rng: RngStream, hard: bool = True, axis: int = -3) -> Tensor:
    """Gumbel-Softmax draw; hard mode is one-hot forward, soft backward."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    u = rng.uniform(logits.data.shape)
    u = np.clip(u, 1e-9, 1.0 - 1e-9)
    g = -np.log(-np.log(u))
    noisy = T.mul(
        T.add(logits, Tensor(g.astype(logits.dtype))),
        Tensor(np.asarray(1.0 / temperature, dtype=logits.dtype)),
    )
    y = T.softmax(noisy, axis=axis)
    if not hard:
        return y
    idx = np.argmax(y.data, axis=axis)
    one_hot = np.zeros_like(y.data)
    np.put_along_axis(one_hot, np.expand_dims(idx, axis), 1.0, axis)
    return T.straight_through(y, one_hot)


def _one_hot_from_idx(idx: np.ndarray, k: int, axis: int, dtype) -> np.ndarray:
    shape = list(idx.shape)
    shape.insert(axis % (idx.ndim + 1), k)
    out = np.zeros(shape, dtype=dtype)
    np.put_along_axis(out, np.expand_dims(idx, axis), 1.0, axis)
    return out


def step(
    model: AutomatonModel,
    grid: Tensor | np.ndarray,
    opts: StepOptions,
    rng: RngStream,
    check_finite: bool = True,
) -> tuple[Tensor, StepInfo]:
    """One synchronous update of every pixel. Returns (new grid, diagnostics)."""
    if not isinstance(grid, Tensor):
        grid = Tensor(grid)
    if grid.data.ndim < 3:
        raise ValueError(f"grid must be [..., C, H, W], got shape {grid.data.shape}")
    c = grid.data.shape[-3]
    if c != model.channels:
        raise ValueError(f"grid has {c} channels, model expects {model.channels}")
    opts.validate(model.n_rules)

    lead = grid.data.shape[:-3]
    h, w = grid.data.shape[-2:]
    dtype = grid.dtype
    info = StepInfo()

    features = T.sobel_perceive(grid)

    if model.variant == "nca":
        delta = rule_delta(model.rules[0], features)

    elif model.variant == "gca":
        out = rule_delta(model.rules[0], features)
        mu = T.slice_channels(out, 0, c)
        if opts.gca_zero_sigma:
            delta = mu
        else:
            logvar = T.slice_channels(out, c, 2 * c)
            sigma = T.exp(T.mul(logvar, Tensor(np.asarray(0.5, dtype=dtype))))
            eps = rng.at(_U_EPS).normal(lead + (c, h, w)).astype(dtype)
            delta = T.add(mu, T.mul(sigma, Tensor(eps)))

    else:  # mixture variants
        noise_t = None
        if model.has_noise:
            noise = rng.at(_U_NOISE).normal(lead + (1, h, w)).astype(dtype)
            info.noise = noise
            noise_t = Tensor(noise)

        logits = _selector_logits(model.selector, grid)
        probs = T.softmax(logits, axis=-3)
        if opts.steering is not None:
            probs = _apply_steering(probs, opts.steering)
        info.probs = probs.data

        deltas = [rule_delta(r, features, noise_t) for r in model.rules]

        mode = opts.selection_mode
        if mode == "soft":
            weights: Tensor | np.ndarray = probs
        elif mode == "sample" and opts.train_mode:
            if opts.steering is None:
                base = logits
            else:
                # steered probabilities re-enter through their log; the floor
                # keeps zero-multiplier rules unreachable without -inf logits
                base = T.log(T.add(probs, Tensor(np.asarray(1e-30, dtype=dtype))))
            weights = gumbel_softmax(base, opts.gumbel_temperature, rng.at(_U_GUMBEL), hard=True, axis=-3)
            info.assignment = np.argmax(weights.data, axis=-3)
        elif mode == "sample":
            idx = sample_categorical_field(rng.at(_U_SELECT), np.moveaxis(probs.data, -3, 0).astype(np.float64))
            idx = np.asarray(idx)
            info.assignment = idx
            weights = _one_hot_from_idx(idx, model.n_rules, -3, dtype)
        else:  # argmax
            idx = np.argmax(probs.data, axis=-3)
            info.assignment = idx
            hard = _one_hot_from_idx(idx, model.n_rules, -3, dtype)
            if opts.train_mode:
                weights = T.straight_through(probs, hard)
            else:
                weights = hard

        if not isinstance(weights, Tensor):
            weights = Tensor(weights)
        delta = None
        for k in range(model.n_rules):
            term = T.mul(T.slice_channels(weights, k, k + 1), deltas[k])
            delta = term if delta is None else T.add(delta, term)

    # residual vs replacement, with per-pixel dropout keeping masked cells fixed
    if model.dropout > 0.0:
        keep = (rng.at(_U_DROPOUT).uniform(lead + (1, h, w)) >= model.dropout).astype(dtype)
        info.dropout_mask = keep
        update = delta if model.residual else T.sub(delta, grid)
        new_grid = T.add(grid, T.mul(Tensor(keep), update))
    else:
        new_grid = T.add(grid, delta) if model.residual else delta

    if check_finite and not np.isfinite(new_grid.data).all():
        raise NumericalDivergenceError("non-finite state after update")
    return new_grid, info


def rollout(
    model: AutomatonModel,
    grid: Tensor | np.ndarray,
    n_steps: int,
    opts: StepOptions,
    rng: RngStream,
    check_finite: bool = True,
) -> tuple[list[Tensor], list[StepInfo]]:
    """Iterate `step` n_steps times; step i draws from rng.at(i).

    Returns n_steps + 1 states including the input.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    if not isinstance(grid, Tensor):
        grid = Tensor(grid)
    states = [grid]
    infos: list[StepInfo] = []
    for i in range(n_steps):
        try:
            grid, inf = step(model, grid, opts, rng.at(i), check_finite=check_finite)
        except NumericalDivergenceError as e:
            raise NumericalDivergenceError(f"diverged at step {i}: {e}") from e
        states.append(grid)
        infos.append(inf)
    return states, infos
