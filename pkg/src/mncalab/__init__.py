"""Mixtures of neural cellular automata for stochastic morphogenesis.

Library layout:

- ``tensor``     reverse-mode autodiff over numpy (float32 work dtype)
- ``rng``        counter-based random streams addressed by coordinates
- ``model``      per-pixel update networks: plain, Gaussian, mixture, mixture+noise
- ``training``   Adam, schedules, sequence- and pool-based training loops
- ``tissue``     stochastic lattice simulator of stem-cell driven growth
- ``metrics``    cohort comparison: KL on type proportions, Wasserstein, border complexity
- ``inference``  rejection sampling over simulator parameters
- ``perturb``    damage models and recovery experiments
- ``analysis``   rule maps, spectral norms, noise partitioning, rule-count sweeps
- ``config``/``checkpoint``/``images``/``cli``  experiment orchestration
"""

__version__ = "0.1.0"
