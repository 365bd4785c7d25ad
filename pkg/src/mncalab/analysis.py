"""Interpretability and theory checks.

Rule-assignment maps, spectral-norm Lipschitz bounds for the per-pixel
layers, noise partitioning for the intrinsic-noise variant, and the
rule-count sweep on the tissue task.
"""

import csv
import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from .metrics import kl_proportions
from .model import AutomatonModel, StepOptions, rollout, select_probs, step
from .rng import RngStream
from .tensor import SOBEL_X, SOBEL_Y, Tensor, _corr3
from .tissue import N_TYPES, SimParams, TissueCohort, one_hot, one_hot_sequence, run_cohort
from .training import TrainConfig, train_timeseries

logger = logging.getLogger(__name__)

# rng purposes under a sweep stream
_U_DATA = 0
_U_CELL = 1


@dataclass
class RuleMap:
    probs: np.ndarray  # [K, H, W], sums to 1 over rules
    argmax: np.ndarray  # [H, W] int rule ids


def rule_map(model: AutomatonModel, grid, steering=None) -> RuleMap:
    """Selector probabilities per pixel at the given state; no stepping."""
    if model.selector is None:
        raise ValueError("rule maps need a mixture model with a selector")
    data = grid.data if isinstance(grid, Tensor) else np.asarray(grid)
    if data.ndim != 3:
        raise ValueError("expected a single [C, H, W] state")
    probs = select_probs(model.selector, Tensor(data), steering).data
    return RuleMap(probs=probs, argmax=np.argmax(probs, axis=0))


def _power_trace(matrix: np.ndarray, iters: int, tol: float):
    """Power iteration on M^T M; returns (estimates, converged).

    Convergence is relative: successive estimates within tol * estimate. A
    relative test keeps the iterate sequence scale-invariant, so scaling M by
    a power of two scales the returned norm exactly.
    """
    m = np.asarray(matrix, dtype=np.float64)
    rng = np.random.default_rng(0x5EED)
    v = rng.standard_normal(m.shape[1])
    v /= np.linalg.norm(v)
    estimates = []
    for _ in range(iters):
        mv = m @ v
        est = float(np.linalg.norm(mv))
        estimates.append(est)
        if len(estimates) > 1 and abs(estimates[-1] - estimates[-2]) < tol * est:
            return estimates, True
        w = m.T @ mv
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return estimates, True  # v is in the null space; sigma estimate is 0
        v = w / norm
    return estimates, False


def spectral_norm(matrix, iters: int = 1000, tol: float = 1e-12) -> float:
    """Largest singular value via power iteration on M^T M."""
    m = matrix.data if isinstance(matrix, Tensor) else np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError("expected a nonempty 2-d matrix")
    if not np.any(m):
        return 0.0
    estimates, converged = _power_trace(m, iters, tol)
    if not converged:
        logger.warning("spectral norm: iteration cap %d reached without convergence", iters)
    return estimates[-1]


def perception_factor(channels: int, height: int, width: int, iters: int = 2000, tol: float = 1e-12) -> float:
    """Operator norm of the fixed perception stage on [channels, height, width] states.

    The stage maps x to [x, grad_x(x), grad_y(x)]; the adjoint of a 3x3
    zero-padded correlation is correlation with the 180-degree-flipped kernel.
    """
    if channels < 1 or height < 1 or width < 1:
        raise ValueError("channels, height and width must be positive")
    sx = SOBEL_X.astype(np.float64)
    sy = SOBEL_Y.astype(np.float64)
    sx_t = np.flip(sx, (0, 1)).copy()
    sy_t = np.flip(sy, (0, 1)).copy()

    def fwd(x):
        return np.concatenate([x, _corr3(x, sx), _corr3(x, sy)], axis=0)

    def adj(y):
        c = channels
        return y[:c] + _corr3(y[c : 2 * c], sx_t) + _corr3(y[2 * c :], sy_t)

    rng = np.random.default_rng(0x5EED)
    v = rng.standard_normal((channels, height, width))
    v /= np.linalg.norm(v)
    prev = 0.0
    for _ in range(iters):
        fv = fwd(v)
        est = float(np.linalg.norm(fv))
        if prev > 0.0 and abs(est - prev) < tol * est:
            return est
        prev = est
        w = adj(fv)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return est
        v = w / norm
    logger.warning("perception factor: iteration cap %d reached without convergence", iters)
    return prev


@dataclass
class LipschitzReport:
    """Per-rule layer-product bounds; the perception factor is not multiplied in."""

    per_rule: np.ndarray  # [K]
    mixture_average: float
    perception: float


def lipschitz_report(model: AutomatonModel, state=None) -> LipschitzReport:
    """Upper bounds sigma(W1) * sigma(W2) per rule, averaged with selector weights.

    Mixtures weight the per-rule bounds by the spatial mean of the selector
    probabilities at `state`; single-rule variants need no state.
    """
    bounds = np.array(
        [spectral_norm(r.w1.data) * spectral_norm(r.w2.data) for r in model.rules]
    )
    if model.selector is None:
        weights = np.ones(1)
        shape = (model.channels, 16, 16) if state is None else np.asarray(
            state.data if isinstance(state, Tensor) else state
        ).shape
    else:
        if state is None:
            raise ValueError("mixture models need a reference state for the average bound")
        probs = rule_map(model, state).probs
        weights = probs.mean(axis=(1, 2))
        shape = (state.data if isinstance(state, Tensor) else np.asarray(state)).shape
    return LipschitzReport(
        per_rule=bounds,
        mixture_average=float(weights @ bounds),
        perception=perception_factor(model.channels, shape[-2], shape[-1]),
    )


@dataclass
class NoisePartition:
    """Injected noise vs argmax outcome class, per designated pixel."""

    pixels: list  # (y, x) tuples
    noise: np.ndarray  # [n_draws, n_pixels]
    outcome: np.ndarray  # [n_draws, n_pixels] int
    n_classes: int

    def class_frequencies(self) -> np.ndarray:
        """[n_pixels, n_classes] outcome frequencies; rows sum to 1."""
        n = len(self.pixels)
        freqs = np.zeros((n, self.n_classes))
        for j in range(n):
            counts = np.bincount(self.outcome[:, j], minlength=self.n_classes)
            freqs[j] = counts / counts.sum()
        return freqs

    def noise_by_class(self, pixel: int) -> dict:
        """Noise values grouped by the outcome class they produced."""
        out = {}
        for cls in np.unique(self.outcome[:, pixel]):
            out[int(cls)] = self.noise[self.outcome[:, pixel] == cls, pixel]
        return out


def noise_partition(
    model: AutomatonModel,
    state,
    rng: RngStream,
    pixels=None,
    n_draws: int = 1000,
    n_classes: int | None = None,
) -> NoisePartition:
    """Repeat single argmax-selection steps from one state, tracking the noise.

    Records the injected noise value and the argmax class of the updated state
    (over the first n_classes channels, tissue decoding by default) at each
    designated pixel. With argmax selection the intrinsic noise is the only
    stochastic input, so the record shows how noise partitions into outcomes.
    """
    if not model.has_noise:
        raise ValueError("noise partitioning needs the intrinsic-noise variant")
    if n_draws < 1:
        raise ValueError("n_draws must be positive")
    data = state.data if isinstance(state, Tensor) else np.asarray(state)
    if data.ndim != 3:
        raise ValueError("expected a single [C, H, W] state")
    if n_classes is None:
        n_classes = min(model.channels, N_TYPES + 1)
    if pixels is None:
        h, w = data.shape[-2:]
        pixels = [(y, x) for y in range(h) for x in range(w)]
    ys = np.array([p[0] for p in pixels])
    xs = np.array([p[1] for p in pixels])
    opts = StepOptions(selection_mode="argmax")
    state_t = Tensor(data)
    noise = np.empty((n_draws, len(pixels)), dtype=np.float64)
    outcome = np.empty((n_draws, len(pixels)), dtype=np.int64)
    for d in range(n_draws):
        out, info = step(model, state_t, opts, rng.at(d))
        noise[d] = info.noise[0, ys, xs]
        outcome[d] = np.argmax(out.data[:n_classes][:, ys, xs], axis=0)
    return NoisePartition(pixels=list(pixels), noise=noise, outcome=outcome, n_classes=n_classes)


@dataclass
class TissueTaskConfig:
    """One rule-count sweep setup: data source, model size, and training knobs."""

    sim: SimParams
    train: TrainConfig
    n_sequences: int = 4
    channels: int = 8  # >= 6; the extras are hidden
    hidden_dim: int = 24
    rollout_steps: int | None = None  # default: the simulation step count
    seed: int = 0

    def validate(self):
        if self.channels < N_TYPES + 1:
            raise ValueError(f"need at least {N_TYPES + 1} channels for the type one-hot")
        if self.n_sequences < 1:
            raise ValueError("need at least one sequence")
        self.train.validate()


def _pad_channels(x: np.ndarray, channels: int) -> np.ndarray:
    if x.shape[0] == channels:
        return x
    pad = np.zeros((channels - x.shape[0],) + x.shape[1:], dtype=x.dtype)
    return np.concatenate([x, pad], axis=0)


def generate_cohort(model: AutomatonModel, cohort: TissueCohort, rollout_steps: int, rng: RngStream,
                    opts: StepOptions | None = None) -> TissueCohort:
    """Roll the model from each realization's initial frame; argmax-decode the finals."""
    if opts is None:
        opts = StepOptions()
    finals = []
    for r in range(cohort.n_realizations):
        x0 = _pad_channels(one_hot(cohort.grids[r, 0]), model.channels)
        states, _ = rollout(model, x0, rollout_steps, opts, rng.at(r))
        finals.append(np.argmax(states[-1].data[: N_TYPES + 1], axis=0).astype(np.uint8))
    return TissueCohort(np.stack(finals)[:, None])


def tissue_kl(model: AutomatonModel, cohort: TissueCohort, rollout_steps: int, rng: RngStream,
              opts: StepOptions | None = None) -> float:
    """KL divergence of real vs model-generated final type proportions."""
    return kl_proportions(cohort, generate_cohort(model, cohort, rollout_steps, rng, opts))


def _sweep_cell(config: TissueTaskConfig, cohort: TissueCohort, sequences, k: int,
                repeat: int, variant: str = "mnca") -> float:
    cell = RngStream(config.seed).at(_U_CELL, k, repeat)
    model_seed = int(cell.at(0).integers(0, 2**31 - 2))
    train_seed = int(cell.at(1).integers(0, 2**31 - 2))
    eval_seed = int(cell.at(2).integers(0, 2**31 - 2))
    n_rules = k if variant.startswith("mnca") else 1
    model = AutomatonModel.create(
        variant, config.channels, config.hidden_dim, n_rules=n_rules, rng=RngStream(model_seed)
    )
    cfg = dataclasses.replace(config.train, seed=train_seed)
    model, _ = train_timeseries(model, sequences, cfg)
    steps = config.rollout_steps if config.rollout_steps is not None else config.sim.n_steps
    return tissue_kl(model, cohort, steps, RngStream(eval_seed))


def rules_sweep(config: TissueTaskConfig, rule_counts, repeats: int = 1, mapper=None):
    """Train a fresh mixture per rule count and score its proportion KL.

    Returns one (k, repeat, kl) row per cell; a cell whose training fails is
    recorded as NaN and the sweep continues. All cells share one simulated
    dataset; per-cell streams make the sweep order-independent.
    """
    if not rule_counts:
        raise ValueError("rule_counts must not be empty")
    if repeats < 1:
        raise ValueError("repeats must be positive")
    config.validate()
    cohort = run_cohort(config.sim, config.n_sequences, RngStream(config.seed).at(_U_DATA))
    sequences = [one_hot_sequence(traj) for traj in cohort.grids]
    cells = [(k, r) for k in rule_counts for r in range(repeats)]

    def run_one(cell):
        k, r = cell
        try:
            return _sweep_cell(config, cohort, sequences, k, r)
        except Exception:
            logger.warning("sweep cell k=%d repeat=%d failed", k, r, exc_info=True)
            return float("nan")

    kls = list((mapper or map)(run_one, cells))
    return [(k, r, kl) for (k, r), kl in zip(cells, kls)]


def summarize_sweep(rows):
    """Aggregate sweep rows into (k, mean, sd) with NaN cells dropped."""
    out = []
    for k in sorted({row[0] for row in rows}):
        vals = np.array([row[2] for row in rows if row[0] == k])
        vals = vals[np.isfinite(vals)]
        if vals.size == 0:
            out.append((k, float("nan"), float("nan")))
        else:
            sd = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
            out.append((k, float(vals.mean()), sd))
    return out


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "repeat", "kl_div"])
        for k, r, kl in rows:
            writer.writerow([k, r, f"{kl:.17g}"])
