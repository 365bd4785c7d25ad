"""
Learning tissue dynamics with a mixture of rules
================================================

A single deterministic update rule has to average over the tissue's random
choices, so it lands on blurry compromise dynamics. A mixture keeps several
rules and lets a per-pixel selector pick among them stochastically, which is
enough to track which cell types appear in what amounts.

This demo trains a small deterministic automaton and a small mixture on the
same simulated cohort and compares the divergence between the real and the
generated type proportions. Scales are kept small so it runs in about a
minute; expect the mixture to come out ahead on most seeds, though single
runs of either model can land in a bad optimum.
"""

from dataclasses import replace

from mncalab.analysis import generate_cohort
from mncalab.metrics import evaluate_cohorts
from mncalab.model import AutomatonModel
from mncalab.rng import RngStream
from mncalab.tissue import default_params, one_hot_sequence, run_cohort
from mncalab.training import TrainConfig, train_timeseries

params = replace(default_params(), grid_size=19, n_steps=19)
cohort = run_cohort(params, 24, RngStream(11))
sequences = [one_hot_sequence(cohort.grids[r]) for r in range(cohort.n_realizations)]
print(f"cohort: {cohort.n_realizations} realizations, "
      f"{params.grid_size}x{params.grid_size}, {params.n_steps} steps")

for variant, k in (("nca", 1), ("mnca", 3)):
    model = AutomatonModel.create(variant, 6, 32, n_rules=k, residual=False,
                                  rng=RngStream(1))
    config = TrainConfig(learning_rate=1e-3, epochs=150, milestones=(100,), gamma=0.1,
                         batch_size=8, window=4, tau=1, seed=2)
    model, log = train_timeseries(model, sequences, config)
    generated = generate_cohort(model, cohort, params.n_steps, RngStream(3))
    report = evaluate_cohorts(cohort, generated)
    print(f"{variant:5s} (k={k}): final loss {log[-1][1]:.4f}  "
          f"kl {report.kl_div:.3f}  size-w {report.size_w:.3f}  "
          f"border-w {report.border_w:.3f}")
