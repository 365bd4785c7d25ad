"""Stochastic lattice simulator of stem-cell-driven tissue growth.

Five occupied cell types on a square grid. Every occupied cell, each step,
normalizes its (birth, death, survival) rates into event probabilities;
divisions place a daughter in a uniformly chosen empty Moore neighbor, with
the daughter's type drawn from the parent's differentiation row plus
interaction contributions from occupied neighbors. Updates are synchronous:
all decisions read the current grid only.

Every random decision is addressed by (cell position, purpose), so any
iteration order and any worker count produce the same next grid.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, replace

import numpy as np

from .rng import RngStream

logger = logging.getLogger(__name__)

EMPTY, STEM, INT1, INT2, DIFF1, DIFF2 = 0, 1, 2, 3, 4, 5
TYPE_NAMES = ("EMPTY", "STEM", "INT1", "INT2", "DIFF1", "DIFF2")
N_TYPES = 5  # occupied types; labels 1..5

# Moore offsets in fixed raster order; the collision rule and the uniform
# neighbor pick both depend on this ordering staying put
MOORE = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))

# rng purposes
_U_EVENT, _U_NEIGH, _U_TYPE = 0, 1, 2
_U_NS, _U_PLACE = 0, 1

_warned: set = set()


def _warn_once(key: str, msg: str):
    if key not in _warned:
        _warned.add(key)
        logger.warning(msg)


@dataclass
class SimParams:
    """Kinetic parameters: per-type rates plus differentiation and interaction."""

    b: np.ndarray  # division rates, [5]
    d: np.ndarray  # death rates, [5]
    s: np.ndarray  # survival rates, [5]
    diff: np.ndarray  # [5, 5], diff[i, j] = base rate of type i+1 producing type j+1
    inter: np.ndarray  # [5, 5] interaction contributions
    grid_size: int = 35
    n_steps: int = 35
    ns_min: int = 5
    ns_max: int = 15
    # "neighbor_row": daughter rates gain row inter[type(neighbor)] per occupied
    # neighbor (reproduces the documented DIFF1 -> DIFF2 coupling).
    # "actor_row": rates gain inter[type(parent), j] per neighbor of type j.
    interaction_semantics: str = "neighbor_row"

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=np.float64)
        self.d = np.asarray(self.d, dtype=np.float64)
        self.s = np.asarray(self.s, dtype=np.float64)
        self.diff = np.asarray(self.diff, dtype=np.float64)
        self.inter = np.asarray(self.inter, dtype=np.float64)

    def validate(self):
        for name, v in (("b", self.b), ("d", self.d), ("s", self.s)):
            if v.shape != (N_TYPES,):
                raise ValueError(f"{name} must have {N_TYPES} entries")
            if np.any(v < 0):
                raise ValueError(f"{name} rates must be nonnegative")
        if self.diff.shape != (N_TYPES, N_TYPES) or self.inter.shape != (N_TYPES, N_TYPES):
            raise ValueError("differentiation and interaction matrices must be 5x5")
        if np.any(self.diff < 0):
            raise ValueError("differentiation entries must be nonnegative")
        if self.grid_size < 1 or self.n_steps < 0:
            raise ValueError("grid_size must be positive and n_steps nonnegative")
        if not 1 <= self.ns_min <= self.ns_max:
            raise ValueError("need 1 <= ns_min <= ns_max")
        if self.ns_max > self.grid_size**2:
            raise ValueError("cannot place more initial cells than grid sites")
        if self.interaction_semantics not in ("neighbor_row", "actor_row"):
            raise ValueError(f"unknown interaction_semantics {self.interaction_semantics!r}")


def default_params() -> SimParams:
    """Five-type hierarchy: stem -> intermediates -> differentiated."""
    diff = np.array([
        [0.3, 0.8, 0.0, 0.0, 0.0],
        [0.1, 0.2, 0.8, 0.0, 0.0],
        [0.0, 0.0, 0.2, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0],
    ])
    inter = np.zeros((5, 5))
    inter[DIFF1 - 1, DIFF2 - 1] = 0.3
    return SimParams(
        b=np.array([0.8, 0.5, 0.5, 0.0, 0.0]),
        d=np.array([0.0, 0.0, 0.0, 0.001, 0.001]),
        s=np.array([0.0, 0.0, 0.01, 1.0, 1.0]),
        diff=diff,
        inter=inter,
    )


def minimal_params() -> SimParams:
    """Two-type model: stem cells with a small death rate feeding one
    differentiated type; no interactions."""
    diff = np.zeros((5, 5))
    diff[STEM - 1, DIFF1 - 1] = 0.1
    diff[DIFF1 - 1, DIFF1 - 1] = 1.0
    return SimParams(
        b=np.array([0.8, 0.0, 0.0, 0.0, 0.0]),
        d=np.array([0.05, 0.0, 0.0, 0.0, 0.0]),
        s=np.array([1.0, 0.0, 0.0, 1.0, 0.0]),
        diff=diff,
        inter=np.zeros((5, 5)),
    )


def init_grid(params: SimParams, rng: RngStream) -> np.ndarray:
    """Uniform cluster of stem cells inside the central 7x7 block."""
    n = params.grid_size
    block = min(7, n)
    ns = int(rng.at(_U_NS).integers(params.ns_min, params.ns_max))
    if ns > block * block:
        raise ValueError(f"cannot place {ns} stem cells in a {block}x{block} block")
    c0 = (n - block) // 2
    cells = rng.at(_U_PLACE).choice_no_replace(block * block, ns)
    grid = np.zeros((n, n), dtype=np.uint8)
    for cell in cells:
        grid[c0 + cell // block, c0 + cell % block] = STEM
    return grid


def _daughter_rates(params: SimParams, parent_type: int, neighbor_types: list) -> np.ndarray:
    k = params.diff[parent_type - 1].copy()
    if params.interaction_semantics == "neighbor_row":
        for t in neighbor_types:
            k += params.inter[t - 1]
    else:  # actor_row
        counts = np.bincount([t - 1 for t in neighbor_types], minlength=N_TYPES)
        k += params.inter[parent_type - 1] * counts
    # interaction entries may be negative; a rate inhibited below zero floors there
    return np.maximum(k, 0.0)


def sim_step(grid: np.ndarray, params: SimParams, rng: RngStream) -> np.ndarray:
    """One synchronous update; the caller keys rng by step index."""
    g = np.asarray(grid)
    h, w = g.shape
    new = g.copy()

    occ = g != EMPTY
    if not occ.any():
        return new
    idx = np.maximum(g.astype(np.int64) - 1, 0)
    b = np.where(occ, params.b[idx], 0.0)
    d = np.where(occ, params.d[idx], 0.0)
    s = np.where(occ, params.s[idx], 0.0)
    total = b + d + s

    stalled = occ & (total == 0.0)
    if stalled.any():
        _warn_once("zero-rate", "occupied cell with zero total rate treated as surviving")
    acting = occ & (total > 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        p_death = np.where(acting, d / total, 0.0)
        p_div = np.where(acting, b / total, 0.0)

    u_event = rng.at(_U_EVENT).uniform((h, w))
    u_neigh = rng.at(_U_NEIGH).uniform((h, w))
    u_type = rng.at(_U_TYPE).uniform((h, w))

    dies = acting & (u_event < p_death)
    divides = acting & ~dies & (u_event < p_death + p_div)
    new[dies] = EMPTY

    # divisions in raster order; a later parent whose chosen site was already
    # claimed this step survives instead
    for y, x in zip(*np.nonzero(divides)):
        empties = []
        neighbor_types = []
        for dy, dx in MOORE:
            yy, xx = y + dy, x + dx
            if not (0 <= yy < h and 0 <= xx < w):
                continue
            if g[yy, xx] == EMPTY:
                empties.append((yy, xx))
            else:
                neighbor_types.append(int(g[yy, xx]))
        if not empties:
            continue  # boxed in: survive
        pick = empties[min(int(u_neigh[y, x] * len(empties)), len(empties) - 1)]
        if new[pick] != EMPTY:
            continue  # collision: first claim won
        k = _daughter_rates(params, int(g[y, x]), neighbor_types)
        ksum = k.sum()
        if ksum <= 0:
            _warn_once("zero-daughter", "division with zero daughter-type mass treated as surviving")
            continue
        cdf = np.cumsum(k / ksum)
        daughter = int(np.searchsorted(cdf, u_type[y, x], side="right"))
        new[pick] = min(daughter, N_TYPES - 1) + 1
    return new


@dataclass
class TissueCohort:
    """Stack of realizations: grids[r, t] is realization r at step t."""

    grids: np.ndarray  # [R, T+1, N, N] uint8

    def __post_init__(self):
        self.grids = np.asarray(self.grids, dtype=np.uint8)
        if self.grids.ndim != 4 or self.grids.shape[-1] != self.grids.shape[-2]:
            raise ValueError("cohort grids must be [R, T+1, N, N]")

    @property
    def n_realizations(self) -> int:
        return self.grids.shape[0]

    @property
    def n_steps(self) -> int:
        return self.grids.shape[1] - 1

    @property
    def grid_size(self) -> int:
        return self.grids.shape[-1]


def run_cohort(params: SimParams, n_realizations: int, rng: RngStream) -> TissueCohort:
    """Independent realizations: init_grid plus n_steps synchronous updates."""
    params.validate()
    if n_realizations < 1:
        raise ValueError("need at least one realization")
    n, t_steps = params.grid_size, params.n_steps
    grids = np.zeros((n_realizations, t_steps + 1, n, n), dtype=np.uint8)
    for r in range(n_realizations):
        root = rng.at(r)
        g = init_grid(params, root.at(0))
        grids[r, 0] = g
        for t in range(t_steps):
            g = sim_step(g, params, root.at(1, t))
            grids[r, t + 1] = g
    return TissueCohort(grids)


def one_hot(grid: np.ndarray) -> np.ndarray:
    """[N, N] labels -> [6, N, N] float32 indicator channels (0 = EMPTY)."""
    g = np.asarray(grid)
    return (g[None] == np.arange(6, dtype=g.dtype)[:, None, None]).astype(np.float32)


def one_hot_sequence(traj: np.ndarray) -> np.ndarray:
    """[T+1, N, N] labels -> [T+1, 6, N, N] float32."""
    t = np.asarray(traj)
    return (t[:, None] == np.arange(6, dtype=t.dtype)[None, :, None, None]).astype(np.float32)


# -- cohort persistence ------------------------------------------------------

_MAGIC = b"MNCA-TIS"
_VERSION = 1
_HEADER = struct.Struct("<8sIIII")  # magic, version, N, T, count


def save_cohort(path, cohort: TissueCohort):
    """Compact binary: fixed header plus one byte per cell per step."""
    r, frames, n, _ = cohort.grids.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, _VERSION, n, frames - 1, r))
        f.write(cohort.grids.tobytes())


def load_cohort(path) -> TissueCohort:
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ValueError("truncated tissue cohort file")
        magic, version, n, t_steps, count = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise ValueError("not a tissue cohort file (bad magic)")
        if version != _VERSION:
            raise ValueError(f"unsupported tissue cohort version {version}")
        body = f.read()
    expect = count * (t_steps + 1) * n * n
    if len(body) != expect:
        raise ValueError(f"tissue cohort payload has {len(body)} bytes, expected {expect}")
    grids = np.frombuffer(body, dtype=np.uint8).reshape(count, t_steps + 1, n, n)
    if grids.max(initial=0) > DIFF2:
        raise ValueError("tissue cohort contains labels outside the cell-type enum")
    return TissueCohort(grids.copy())


def custom_params(base: SimParams | None = None, **overrides) -> SimParams:
    """Copy of a parameter set with field overrides, for sweeps and inference."""
    src = base if base is not None else default_params()
    p = replace(src, b=src.b.copy(), d=src.d.copy(), s=src.s.copy(),
                diff=src.diff.copy(), inter=src.inter.copy())
    for key, value in overrides.items():
        if not hasattr(p, key):
            raise ValueError(f"SimParams has no field {key!r}")
        setattr(p, key, value)
    p.__post_init__()
    p.validate()
    return p
