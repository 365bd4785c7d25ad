"""Evaluation metrics for generated tissues and recovered images.

Three cohort-level statistics (KL divergence on cell-type proportions, exact
1-Wasserstein on tissue-size and border-complexity distributions) plus the
RGBA mean-squared error used by the perturbation-recovery experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, _corr3
from .tissue import EMPTY, N_TYPES, TissueCohort

# discrete Laplacian for occupancy masks
LAPLACE = np.array([
    [-1.0, -1.0, -1.0],
    [-1.0, 8.0, -1.0],
    [-1.0, -1.0, -1.0],
]) / 8.0
BORDER_THRESHOLD = 0.1


@dataclass
class MetricReport:
    kl_div: float
    size_w: float
    border_w: float
    meta: dict = field(default_factory=dict)

    def as_row(self):
        return (self.kl_div, self.size_w, self.border_w)


def type_proportions(grids: np.ndarray) -> np.ndarray:
    """Proportions of the five occupied cell types over a stack of grids."""
    g = np.asarray(grids)
    counts = np.array([(g == t).sum() for t in range(1, N_TYPES + 1)], dtype=np.float64)
    total = counts.sum()
    return counts / total if total > 0 else counts


def kl_proportions(real: TissueCohort, generated: TissueCohort) -> float:
    """KL(P || Q) over final-step cell-type proportions, EMPTY excluded.

    Q gets additive 1e-9 smoothing before normalization so an absent type in
    the generated cohort stays finite; 0 log 0 = 0 on the P side.
    """
    p = type_proportions(real.grids[:, -1])
    q = type_proportions(generated.grids[:, -1])
    q = q + 1e-9
    q = q / q.sum()
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def wasserstein1(u, v) -> float:
    """Exact 1-Wasserstein between empirical samples: integral of |F_U - F_V|."""
    u = np.sort(np.asarray(u, dtype=np.float64))
    v = np.sort(np.asarray(v, dtype=np.float64))
    if u.size == 0 or v.size == 0:
        raise ValueError("wasserstein1 needs nonempty samples")
    pooled = np.sort(np.concatenate([u, v]))
    widths = np.diff(pooled)
    cdf_u = np.searchsorted(u, pooled[:-1], side="right") / u.size
    cdf_v = np.searchsorted(v, pooled[:-1], side="right") / v.size
    return float(np.sum(np.abs(cdf_u - cdf_v) * widths))


def tissue_size(grid: np.ndarray) -> int:
    """Count of occupied cells."""
    return int((np.asarray(grid) != EMPTY).sum())


def border_complexity(grid: np.ndarray) -> int:
    """Cells where the Laplacian of the occupancy mask exceeds 0.1 in magnitude."""
    mask = (np.asarray(grid) != EMPTY).astype(np.float64)
    lap = _corr3(mask, LAPLACE)
    return int((np.abs(lap) > BORDER_THRESHOLD).sum())


def rgba_mse(grid, target) -> float:
    """Mean squared error over the first four channels."""
    a = grid.data if isinstance(grid, Tensor) else np.asarray(grid)
    b = target.data if isinstance(target, Tensor) else np.asarray(target)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[-3] < 4:
        raise ValueError("need at least 4 channels")
    d = a[..., :4, :, :].astype(np.float64) - b[..., :4, :, :].astype(np.float64)
    return float(np.mean(d * d))


def evaluate_cohorts(real: TissueCohort, generated: TissueCohort, normalize: bool = True) -> MetricReport:
    """Bundle the three cohort metrics, computed on each realization's final grid.

    With normalize=True the size and border samples are divided by the grid
    area so the Wasserstein values are grid-size free.
    """
    if real.n_realizations < 1 or generated.n_realizations < 1:
        raise ValueError("cohorts must be nonempty")
    scale_r = float(real.grid_size**2) if normalize else 1.0
    scale_g = float(generated.grid_size**2) if normalize else 1.0
    sizes_r = [tissue_size(g) / scale_r for g in real.grids[:, -1]]
    sizes_g = [tissue_size(g) / scale_g for g in generated.grids[:, -1]]
    borders_r = [border_complexity(g) / scale_r for g in real.grids[:, -1]]
    borders_g = [border_complexity(g) / scale_g for g in generated.grids[:, -1]]
    return MetricReport(
        kl_div=kl_proportions(real, generated),
        size_w=wasserstein1(sizes_r, sizes_g),
        border_w=wasserstein1(borders_r, borders_g),
        meta={"normalized": normalize,
              "n_real": real.n_realizations,
              "n_generated": generated.n_realizations},
    )


def summarize_reports(reports: list) -> dict:
    """Mean and standard deviation per metric over repeated runs."""
    rows = np.array([r.as_row() for r in reports], dtype=np.float64)
    names = ("kl_div", "size_w", "border_w")
    out = {}
    for i, name in enumerate(names):
        out[name] = (float(rows[:, i].mean()), float(rows[:, i].std()))
    return out


def write_metric_csv(path, labeled_reports):
    """One CSV row per (label, reports): mean and std per metric."""
    import csv

    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["model", "kl_div", "kl_div_std", "size_w", "size_w_std",
                     "border_w", "border_w_std"])
        for label, reports in labeled_reports:
            s = summarize_reports(reports)
            wr.writerow([label,
                         f"{s['kl_div'][0]:.6g}", f"{s['kl_div'][1]:.6g}",
                         f"{s['size_w'][0]:.6g}", f"{s['size_w'][1]:.6g}",
                         f"{s['border_w'][0]:.6g}", f"{s['border_w'][1]:.6g}"])
