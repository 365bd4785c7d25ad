"""State perturbations and the recovery experiment.

Three families: chunk removal (zero a box), additive Gaussian noise on a
pixel fraction, and sparse pixel removal. Recovery rolls a perturbed state
forward and tracks visible-channel MSE against the training target.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .metrics import rgba_mse
from .model import AutomatonModel, StepOptions, rollout
from .rng import RngStream
from .tensor import NumericalDivergenceError, Tensor

KINDS = ("chunk", "noise", "sparse")

# rng purposes under the experiment stream
_U_PERTURB = 0
_U_ROLL = 1


@dataclass
class Perturbation:
    """One perturbation family and its size parameter.

    chunk: zero all channels in a side x side box, center uniform over pixels
    (side 0 is a test-only identity). noise: add sigma * N(0,1) per channel on
    a ceil(rho*H*W)-pixel subset. sparse: zero all channels at `count` distinct
    pixels. visible_only restricts the effect to the first four channels.
    """

    kind: str
    side: int = 0
    rho: float = 0.0
    count: int = 0
    sigma: float = 1.0
    visible_only: bool = False

    def validate(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.kind == "chunk" and self.side < 0:
            raise ValueError("box side must be nonnegative")
        if self.kind == "noise" and not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must be in (0, 1]")
        if self.kind == "noise" and self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.kind == "sparse" and self.count < 0:
            raise ValueError("count must be nonnegative")

    def label(self) -> str:
        if self.kind == "chunk":
            return f"chunk{self.side}"
        if self.kind == "noise":
            return f"noise{self.rho:g}"
        return f"sparse{self.count}"


def apply_perturbation(grid, p: Perturbation, rng: RngStream) -> Tensor:
    """Return a perturbed copy; pixels outside the support are untouched."""
    p.validate()
    data = (grid.data if isinstance(grid, Tensor) else np.asarray(grid)).copy()
    if data.ndim != 3 or data.shape[0] < 4:
        raise ValueError("expected a [C, H, W] state with at least 4 channels")
    _, h, w = data.shape
    chans = slice(0, 4) if p.visible_only else slice(None)

    if p.kind == "chunk":
        if p.side > 0:
            cy = int(rng.at(0, 0).integers(0, h - 1))
            cx = int(rng.at(0, 1).integers(0, w - 1))
            y0 = max(cy - (p.side - 1) // 2, 0)
            x0 = max(cx - (p.side - 1) // 2, 0)
            data[chans, y0 : y0 + p.side, x0 : x0 + p.side] = 0.0
    elif p.kind == "noise":
        m = int(np.ceil(p.rho * h * w))
        flat = rng.at(0).choice_no_replace(h * w, m)
        ys, xs = np.unravel_index(flat, (h, w))
        n_chan = 4 if p.visible_only else data.shape[0]
        draws = p.sigma * rng.at(1).normal((n_chan, m))
        data[chans, ys, xs] += draws.astype(data.dtype)
    else:  # sparse
        if p.count > h * w:
            raise ValueError("cannot remove more pixels than the grid has")
        if p.count > 0:
            flat = rng.at(0).choice_no_replace(h * w, p.count)
            ys, xs = np.unravel_index(flat, (h, w))
            data[chans, ys, xs] = 0.0
    return Tensor(data)


@dataclass
class RecoveryResult:
    """Per-repeat MSE curves plus the step-`steps` summary."""

    curves: np.ndarray  # [n_ok, steps + 1] float64
    failed_repeats: list  # repeat indices that diverged
    mean_final: float
    ci95_final: float
    snapshots: dict = field(default_factory=dict)  # step -> [C, H, W] state (repeat 0)

    @property
    def n_ok(self) -> int:
        return self.curves.shape[0]

    @property
    def n_failed(self) -> int:
        return len(self.failed_repeats)


def recovery_experiment(
    model: AutomatonModel,
    trained_state,
    target,
    p: Perturbation,
    rng: RngStream,
    repeats: int = 50,
    steps: int = 100,
    opts: StepOptions | None = None,
    snapshot_steps: tuple = (),
) -> RecoveryResult:
    """Perturb, roll `steps` steps, and track MSE; each repeat has its own stream.

    The curve starts at the perturbed state's MSE (before any model step).
    Divergent repeats are excluded from the curves and listed separately.
    The final-step summary is mean +/- 1.96 * sd / sqrt(n) over surviving repeats.
    """
    if repeats < 1 or steps < 1:
        raise ValueError("repeats and steps must be positive")
    if opts is None:
        opts = StepOptions()
    target_data = target.data if isinstance(target, Tensor) else np.asarray(target)
    curves = []
    failed = []
    snapshots = {}
    for r in range(repeats):
        state = apply_perturbation(trained_state, p, rng.at(_U_PERTURB, r))
        try:
            states, _ = rollout(model, state, steps, opts, rng.at(_U_ROLL, r))
        except NumericalDivergenceError:
            failed.append(r)
            continue
        curve = [rgba_mse(s.data[:4], target_data) for s in states]
        curves.append(curve)
        if r == 0:
            for s_idx in snapshot_steps:
                snapshots[int(s_idx)] = states[int(s_idx)].data.copy()
    if not curves:
        raise RuntimeError(f"all {repeats} repeats diverged")
    arr = np.asarray(curves, dtype=np.float64)
    finals = arr[:, -1]
    n = finals.size
    sd = finals.std(ddof=1) if n > 1 else 0.0
    return RecoveryResult(
        curves=arr,
        failed_repeats=failed,
        mean_final=float(finals.mean()),
        ci95_final=float(1.96 * sd / np.sqrt(n)),
        snapshots=snapshots,
    )


def write_recovery_csv(path, rows):
    """Summary table: one row per (model label, perturbation label, result)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "perturbation", "mean_final", "ci95_final", "n_ok", "n_failed"])
        for model_label, perturb_label, res in rows:
            writer.writerow(
                [
                    model_label,
                    perturb_label,
                    f"{res.mean_final:.17g}",
                    f"{res.ci95_final:.17g}",
                    res.n_ok,
                    res.n_failed,
                ]
            )


def write_curve_csv(path, result: RecoveryResult):
    """Per-step mean and 95% CI over surviving repeats, for recovery plots."""
    mean = result.curves.mean(axis=0)
    n = result.curves.shape[0]
    sd = result.curves.std(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
    ci = 1.96 * sd / np.sqrt(n)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "mean_mse", "ci95"])
        for i in range(mean.size):
            writer.writerow([i, f"{mean[i]:.17g}", f"{ci[i]:.17g}"])
