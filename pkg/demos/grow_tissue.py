"""
Stochastic tissue growth
========================

A five-type stochastic cellular automaton grows a tissue from a small
cluster of stem cells. Each occupied site divides, dies, or stays put with
type-specific rates; daughters pick their type from the parent's
differentiation row, plus an interaction bonus when certain neighbors are
present (here: DIFF1 neighbors unlock DIFF2 daughters).

Running this script simulates a small cohort, prints the final cell-type
proportions, and writes the last grid of the first realization as a PNG.
"""

import numpy as np

from mncalab.images import render_tissue, save_png
from mncalab.metrics import border_complexity, tissue_size, type_proportions
from mncalab.rng import RngStream
from mncalab.tissue import default_params, run_cohort

params = default_params()
print(f"grid {params.grid_size}x{params.grid_size}, {params.n_steps} steps")

cohort = run_cohort(params, 16, RngStream(7))
finals = cohort.grids[:, -1]

props = type_proportions(finals)
for name, p in zip(("STEM", "INT1", "INT2", "DIFF1", "DIFF2"), props):
    print(f"  {name:6s} {p:.3f}")

sizes = [tissue_size(g) for g in finals]
borders = [border_complexity(g) for g in finals]
print(f"tissue size  mean {np.mean(sizes):.1f}  min {min(sizes)}  max {max(sizes)}")
print(f"border cells mean {np.mean(borders):.1f}")

save_png("tissue_final.png", render_tissue(finals[0]))
print("wrote tissue_final.png")
