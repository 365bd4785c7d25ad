"""Rejection ABC over tissue simulation parameters.

Priors are sampled per rate entry, each particle runs its own simulation,
and acceptance is judged by one of three summary statistics: global type
proportions, 3x3 neighborhood composition, or pairwise mask correlation.
"""

import csv
import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .metrics import wasserstein1
from .rng import RngStream
from .tensor import _corr3
from .tissue import N_TYPES, SimParams, TissueCohort, default_params, one_hot, run_cohort

logger = logging.getLogger(__name__)

# rng purposes (first coordinate under the run stream)
_U_PRIOR = 0
_U_SIM = 1

STAT_KINDS = ("proportions", "neighborhood", "correlation")


@dataclass
class PriorSpec:
    """Independent priors: Gamma(shape 1, scale x) per rate entry, Normal for interactions.

    Gamma(1, x) is the exponential with mean x, so rates stay nonnegative.
    """

    b_scale: float = 0.1
    d_scale: float = 0.01
    s_scale: float = 0.1
    diff_scale: float = 0.1
    inter_mean: float = 0.0
    inter_std: float = 1.0

    def validate(self):
        for name in ("b_scale", "d_scale", "s_scale", "diff_scale", "inter_std"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SummaryStat:
    kind: str
    data: np.ndarray  # proportions [6]; neighborhood [6, samples]; correlation [5, 5]


@dataclass
class Particle:
    params: SimParams
    stat: SummaryStat
    distance: float
    accepted: bool = False
    weight: float = 0.0


@dataclass
class AbcDiagnostics:
    n_particles: int
    n_accepted: int
    acceptance_rate: float
    epsilon: float
    kind: str
    min_distance: float
    particles: list = field(default_factory=list)


def sample_prior(spec: PriorSpec, rng: RngStream, base: SimParams | None = None) -> SimParams:
    """Draw one SimParams; rates come from the prior, structure from `base`."""
    spec.validate()
    if base is None:
        base = default_params()
    return dataclasses.replace(
        base,
        b=rng.at(0).gamma(1.0, spec.b_scale, (N_TYPES,)),
        d=rng.at(1).gamma(1.0, spec.d_scale, (N_TYPES,)),
        s=rng.at(2).gamma(1.0, spec.s_scale, (N_TYPES,)),
        diff=rng.at(3).gamma(1.0, spec.diff_scale, (N_TYPES, N_TYPES)),
        inter=spec.inter_mean + spec.inter_std * rng.at(4).normal((N_TYPES, N_TYPES)),
    )


def summary_proportions(cohort: TissueCohort) -> SummaryStat:
    """Fraction of final-step sites per type, EMPTY included. Sums to 1."""
    finals = cohort.grids[:, -1]
    counts = np.bincount(finals.ravel(), minlength=N_TYPES + 1).astype(np.float64)
    return SummaryStat("proportions", counts / counts.sum())


def summary_neighborhood(cohort: TissueCohort) -> SummaryStat:
    """Per-site 3x3 type composition (zero padding counts as EMPTY, center included).

    Returns the per-type marginal sample sets, one row per type, pooled over
    all sites and realizations, for Wasserstein comparison.
    """
    finals = cohort.grids[:, -1]
    box = np.ones((3, 3), dtype=np.float64)
    rows = []
    for r in range(cohort.n_realizations):
        oh = one_hot(finals[r]).astype(np.float64)
        comp = _corr3(oh, box) / 9.0
        # out-of-grid mass belongs to EMPTY
        comp[0] = 1.0 - comp[1:].sum(axis=0)
        rows.append(comp.reshape(N_TYPES + 1, -1))
    return SummaryStat("neighborhood", np.concatenate(rows, axis=1))


def summary_correlation(cohort: TissueCohort) -> SummaryStat:
    """Pearson correlation between the binary occupancy masks of each type pair.

    A type with zero-variance mask (absent or filling every site) correlates
    as 0 with everything, by convention.
    """
    finals = cohort.grids[:, -1]
    masks = np.stack(
        [(finals == t).astype(np.float64).ravel() for t in range(1, N_TYPES + 1)]
    )
    centered = masks - masks.mean(axis=1, keepdims=True)
    std = np.sqrt((centered**2).mean(axis=1))
    if np.any(std == 0):
        logger.warning("zero-variance type mask; correlation entries set to 0")
    cov = centered @ centered.T / masks.shape[1]
    denom = np.outer(std, std)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0, cov / np.where(denom > 0, denom, 1.0), 0.0)
    return SummaryStat("correlation", r)


_SUMMARY_FNS = {
    "proportions": summary_proportions,
    "neighborhood": summary_neighborhood,
    "correlation": summary_correlation,
}


def compute_summary(cohort: TissueCohort, kind: str) -> SummaryStat:
    if kind not in _SUMMARY_FNS:
        raise ValueError(f"unknown summary kind {kind!r}; expected one of {STAT_KINDS}")
    return _SUMMARY_FNS[kind](cohort)


def abc_distance(stat_a: SummaryStat, stat_b: SummaryStat, kind: str | None = None) -> float:
    """Distance between two summary statistics of the same kind.

    proportions: total variation (W1 on type indices collapses to L1/2);
    neighborhood: mean over the six per-type marginal W1 distances;
    correlation: Frobenius norm of the difference, normalized by sqrt(2).
    """
    if stat_a.kind != stat_b.kind:
        raise ValueError(f"statistic kinds differ: {stat_a.kind!r} vs {stat_b.kind!r}")
    if kind is not None and stat_a.kind != kind:
        raise ValueError(f"expected {kind!r} statistics, got {stat_a.kind!r}")
    a, b = stat_a.data, stat_b.data
    if stat_a.kind == "proportions":
        return float(0.5 * np.abs(a - b).sum())
    if stat_a.kind == "neighborhood":
        return float(np.mean([wasserstein1(a[t], b[t]) for t in range(a.shape[0])]))
    return float(np.linalg.norm(a - b, ord="fro") / np.sqrt(2.0))


def _weights_from_distances(distances: np.ndarray) -> np.ndarray:
    """Weights inversely proportional to distance, normalized to sum 1.

    Exact matches (distance 0) take the limit: all mass split evenly over them.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise ValueError("no distances to weight")
    zero = d == 0.0
    if zero.any():
        logger.warning("zero-distance particle(s); weights concentrate on exact matches")
        w = zero.astype(np.float64)
    else:
        w = 1.0 / d
    return w / w.sum()


def write_particle_csv(path, particles: list):
    """Persist sampled parameters, distance, accepted flag, and weight per particle."""
    cols = (
        [f"b{i}" for i in range(N_TYPES)]
        + [f"d{i}" for i in range(N_TYPES)]
        + [f"s{i}" for i in range(N_TYPES)]
        + [f"diff_{i}_{j}" for i in range(N_TYPES) for j in range(N_TYPES)]
        + [f"inter_{i}_{j}" for i in range(N_TYPES) for j in range(N_TYPES)]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index"] + cols + ["distance", "accepted", "weight"])
        for i, pt in enumerate(particles):
            vals = np.concatenate(
                [pt.params.b, pt.params.d, pt.params.s, pt.params.diff.ravel(), pt.params.inter.ravel()]
            )
            writer.writerow(
                [i]
                + [f"{v:.17g}" for v in vals]
                + [f"{pt.distance:.17g}", int(pt.accepted), f"{pt.weight:.17g}"]
            )


def abc_run(
    observed: TissueCohort,
    spec: PriorSpec,
    n_particles: int,
    epsilon: float | None,
    kind: str,
    rng: RngStream,
    base: SimParams | None = None,
    n_realizations: int = 1,
    quantile: float = 0.1,
    trace_path=None,
    mapper=None,
):
    """Rejection ABC: sample, simulate, accept by distance, average with 1/distance weights.

    epsilon=None accepts the `quantile` fraction with the smallest distances
    (the printed thresholds were tuned to accept about 10%). Returns the
    posterior point estimate and acceptance diagnostics. Particle work is
    keyed by substream index, so a parallel `mapper` gives identical results.
    """
    if n_particles < 1:
        raise ValueError("n_particles must be at least 1")
    if epsilon is not None and epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not 0 < quantile <= 1:
        raise ValueError("quantile must be in (0, 1]")
    spec.validate()
    obs_stat = compute_summary(observed, kind)
    if base is None:
        base = dataclasses.replace(
            default_params(), grid_size=observed.grid_size, n_steps=observed.n_steps
        )

    def run_one(i):
        params = sample_prior(spec, rng.at(_U_PRIOR, i), base=base)
        cohort = run_cohort(params, n_realizations, rng.at(_U_SIM, i))
        stat = compute_summary(cohort, kind)
        return Particle(params, stat, abc_distance(obs_stat, stat))

    particles = list((mapper or map)(run_one, range(n_particles)))
    distances = np.array([pt.distance for pt in particles])

    if epsilon is None:
        n_keep = max(1, int(round(quantile * n_particles)))
        order = np.argsort(distances, kind="stable")
        accepted_idx = order[:n_keep]
        epsilon_used = float(distances[accepted_idx].max())
    else:
        epsilon_used = float(epsilon)
        accepted_idx = np.nonzero(distances < epsilon_used)[0]
    if accepted_idx.size == 0:
        raise RuntimeError(
            f"no particles accepted at epsilon={epsilon_used:g}; "
            f"smallest distance seen was {distances.min():.6g}"
        )

    weights = _weights_from_distances(distances[accepted_idx])
    for j, i in enumerate(accepted_idx):
        particles[i].accepted = True
        particles[i].weight = float(weights[j])

    acc = [particles[i] for i in accepted_idx]
    posterior = dataclasses.replace(
        base,
        b=sum(w * pt.params.b for w, pt in zip(weights, acc)),
        d=sum(w * pt.params.d for w, pt in zip(weights, acc)),
        s=sum(w * pt.params.s for w, pt in zip(weights, acc)),
        diff=sum(w * pt.params.diff for w, pt in zip(weights, acc)),
        inter=sum(w * pt.params.inter for w, pt in zip(weights, acc)),
    )
    diagnostics = AbcDiagnostics(
        n_particles=n_particles,
        n_accepted=int(accepted_idx.size),
        acceptance_rate=accepted_idx.size / n_particles,
        epsilon=epsilon_used,
        kind=kind,
        min_distance=float(distances.min()),
        particles=particles,
    )
    if trace_path is not None:
        write_particle_csv(trace_path, particles)
    return posterior, diagnostics
