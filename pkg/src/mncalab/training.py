"""Optimization machinery and the two training loops.

Adam with bias correction, a multi-step learning-rate schedule, per-tensor
gradient normalization, and:

- ``train_timeseries``  supervised reconstruction of recorded state sequences,
  stepping a window every tau steps and updating after each prediction
- ``train_pool``        morphogenesis training from a persistent pool of
  growing states, with worst-of-batch reseeding

Both loops draw every random decision from coordinate-addressed streams, so a
fixed seed reproduces the loss log bit for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .model import AutomatonModel, StepOptions, step
from .rng import RngStream
from .tensor import ParamSet, Tensor

# rng purposes inside one epoch / pool iteration
_U_WINDOW, _U_BATCH, _U_STEPS, _U_ROLL = 0, 1, 2, 3


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    milestones: tuple[int, ...] = ()
    gamma: float = 1.0  # lr multiplier at each milestone
    batch_size: int = 8  # B for pool training, M sequences for time series
    pool_size: int = 1000
    window: int = 1  # w
    tau: int = 1  # evolution steps between supervised frames
    n_min: int = 30  # growth-step range for pool training
    n_max: int = 50
    seed: int = 0
    grad_eps: float = 1e-8
    selection_mode: str = "sample"
    gumbel_temperature: float = 1.0

    def validate(self):
        ms = tuple(self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError("milestones must be strictly increasing")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.n_min > self.n_max:
            raise ValueError("n_min must not exceed n_max")
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if self.window < self.tau:
            raise ValueError("window must cover at least one tau interval")
        if self.epochs < 0 or self.batch_size < 1 or self.pool_size < 1:
            raise ValueError("epochs, batch_size and pool_size must be positive")
        if self.learning_rate <= 0 or self.grad_eps <= 0:
            raise ValueError("learning_rate and grad_eps must be positive")


@dataclass
class PoolState:
    """Persistent training pool: P stored grids plus per-slot loss history."""

    grids: np.ndarray  # [P, D, H, W]
    last_loss: np.ndarray  # [P], nan until a slot is first evaluated
    history: list = field(default_factory=list)  # (iteration, slot, loss)


# -- optimizer ---------------------------------------------------------------


def adam_update(params: ParamSet, grads: dict, lr: float,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> ParamSet:
    """One Adam step with bias correction; moments and math in float64."""
    params.step_count += 1
    t = params.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = params.m[name] = beta1 * params.m[name] + (1.0 - beta1) * g
        v = params.v[name] = beta2 * params.v[name] + (1.0 - beta2) * g * g
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.data = (p.data.astype(np.float64) - update).astype(p.data.dtype)
    return params


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Base rate times gamma for every milestone at or before this epoch."""
    passed = sum(1 for m in config.milestones if m <= epoch)
    return config.learning_rate * config.gamma ** passed


def normalize_grads(grads: dict, eps: float = 1e-8) -> dict:
    """Per-tensor g / (||g||_2 + eps)."""
    out = {}
    for name, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        norm = float(np.sqrt(np.sum(g * g)))
        out[name] = g / (norm + eps)
    return out


def write_loss_log(path, rows):
    """Loss log as CSV with an (epoch, loss, lr) header."""
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["epoch", "loss", "lr"])
        for epoch, loss, lr in rows:
            wr.writerow([epoch, f"{loss:.10g}", f"{lr:.10g}"])


# -- time-series loop --------------------------------------------------------


def _pad_hidden(states: np.ndarray, channels: int) -> np.ndarray:
    """Zero-fill hidden channels beyond the data channels, if the model has any."""
    c = states.shape[-3]
    if c == channels:
        return states
    pad = np.zeros(states.shape[:-3] + (channels - c,) + states.shape[-2:], dtype=states.dtype)
    return np.concatenate([states, pad], axis=-3)


def train_timeseries(model: AutomatonModel, sequences: list, config: TrainConfig):
    """Fit the model to recorded state sequences.

    Each sequence is [L, C, H, W] with L - 1 transitions. Per epoch: sample a
    window start, then for every position t in the window (stride tau) roll
    the model tau steps from the true state S_t, take the MSE against S_{t+tau}
    on the data channels, and apply a normalized-gradient Adam update.

    Returns (model, loss_log) with one (epoch, mean loss, lr) row per epoch.
    """
    config.validate()
    if not sequences:
        raise ValueError("need at least one sequence")
    seqs = [np.asarray(s, dtype=np.float32) for s in sequences]
    shape = seqs[0].shape
    if any(s.shape != shape for s in seqs):
        raise ValueError("all sequences must share one shape")
    if seqs[0].ndim != 4:
        raise ValueError("sequences must be [L, C, H, W]")
    n_steps_total = shape[0] - 1  # transitions available
    if config.window > n_steps_total:
        raise ValueError(
            f"window {config.window} exceeds the {n_steps_total} transitions per sequence"
        )
    c_data = shape[1]
    if model.channels < c_data:
        raise ValueError("model has fewer channels than the data")

    data = np.stack(seqs)  # [N, L, C, H, W]
    n_seq = data.shape[0]
    m_batch = min(config.batch_size, n_seq)
    ps = model.param_set()
    opts = StepOptions(
        selection_mode=config.selection_mode,
        train_mode=True,
        gumbel_temperature=config.gumbel_temperature,
    )
    root = RngStream(config.seed)
    log = []

    for epoch in range(config.epochs):
        re = root.at(epoch)
        t_start = int(re.at(_U_WINDOW).integers(0, n_steps_total - config.window))
        if m_batch == n_seq:
            pick = np.arange(n_seq)
        else:
            pick = np.sort(re.at(_U_BATCH).choice_no_replace(n_seq, m_batch))
        lr = lr_at(config, epoch)
        losses = []
        for t in range(t_start, t_start + config.window - config.tau + 1, config.tau):
            x = Tensor(_pad_hidden(data[pick, t], model.channels))
            for j in range(config.tau):
                x, _ = step(model, x, opts, re.at(_U_ROLL, t, j))
            pred = T.slice_channels(x, 0, c_data) if model.channels > c_data else x
            loss = T.mse(pred, Tensor(data[pick, t + config.tau]))
            ps.zero_grad()
            T.backward(loss)
            adam_update(ps, normalize_grads(ps.grads(), config.grad_eps), lr)
            losses.append(loss.item())
        log.append((epoch, float(np.mean(losses)), lr))
    return model, log


# -- pool loop ----------------------------------------------------------------


def make_seed_state(channels: int, height: int, width: int, seed_pixel) -> np.ndarray:
    """Zero state with channels 3.. set to 1 at the seed pixel."""
    sh, sw = int(seed_pixel[0]), int(seed_pixel[1])
    if not (0 <= sh < height and 0 <= sw < width):
        raise ValueError(f"seed pixel ({sh}, {sw}) outside a {height}x{width} grid")
    if channels < 4:
        raise ValueError("pool training needs at least 4 state channels")
    x0 = np.zeros((channels, height, width), dtype=np.float32)
    x0[3:, sh, sw] = 1.0
    return x0


def train_pool(model: AutomatonModel, target: np.ndarray, seed_pixel, config: TrainConfig):
    """Grow the target image from a single seed, training against a pool.

    target is [4, H, W] RGBA. Every iteration samples a batch of stored
    states, rolls it a random number of steps, supervises the first four
    channels, reseeds the floor(0.15 B) worst batch members, and writes the
    evolved states back to their pool slots.

    Returns (model, loss_log, pool).
    """
    config.validate()
    target = np.asarray(target, dtype=np.float32)
    if target.ndim != 3 or target.shape[0] != 4:
        raise ValueError(f"target must be [4, H, W], got shape {target.shape}")
    if model.channels < 4:
        raise ValueError("model needs >= 4 channels for RGBA supervision")
    h, w = target.shape[1:]
    x0 = make_seed_state(model.channels, h, w, seed_pixel)

    p = config.pool_size
    b = min(config.batch_size, p)
    k_reseed = int(np.floor(0.15 * b))
    pool = PoolState(
        grids=np.repeat(x0[None], p, axis=0),
        last_loss=np.full(p, np.nan),
    )
    ps = model.param_set()
    opts = StepOptions(
        selection_mode=config.selection_mode,
        train_mode=True,
        gumbel_temperature=config.gumbel_temperature,
    )
    root = RngStream(config.seed)
    target_b = np.broadcast_to(target, (b,) + target.shape).copy()
    log = []

    for it in range(config.epochs):
        re = root.at(it)
        idx = np.sort(re.at(_U_BATCH).choice_no_replace(p, b))
        n = int(re.at(_U_STEPS).integers(config.n_min, config.n_max))
        x = Tensor(pool.grids[idx].copy())
        for j in range(n):
            x, _ = step(model, x, opts, re.at(_U_ROLL, j))
        rgba = T.slice_channels(x, 0, 4)
        loss = T.mse(rgba, Tensor(target_b))
        ps.zero_grad()
        T.backward(loss)
        lr = lr_at(config, it)
        adam_update(ps, normalize_grads(ps.grads(), config.grad_eps), lr)

        diff = rgba.data.astype(np.float64) - target
        member_loss = (diff * diff).mean(axis=(1, 2, 3))
        new_states = x.data.copy()
        if k_reseed:
            worst = np.argsort(-member_loss, kind="stable")[:k_reseed]
            new_states[worst] = x0
        pool.grids[idx] = new_states
        pool.last_loss[idx] = member_loss
        for slot, ml in zip(idx, member_loss):
            pool.history.append((it, int(slot), float(ml)))
        log.append((it, loss.item(), lr))
    return model, log, pool
