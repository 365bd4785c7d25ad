"""Counter-based random streams.

Every random draw in this package is addressed by (seed, coordinates), where
the coordinates are a short tuple of nonnegative integers naming the draw
site: e.g. (realization, step, purpose) or (epoch, slot, step, purpose).
Streams with different coordinates are statistically independent and can be
consumed in any order, on any number of workers, without changing a single
draw. This is what makes reruns byte-identical regardless of scheduling.

Implementation: the coordinate tuple is folded through splitmix64 into the
high words of a Philox 4x64 counter; the seed becomes the Philox key. The low
counter word is left free as the running block index, so each addressed
stream has its full period available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    # splitmix64 output mix; full-period bijection on 64-bit words
    z &= _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def _fold(seed: int, coords: tuple[int, ...]) -> int:
    h = _mix64((seed & _M64) ^ 0x5851F42D4C957F2D)
    for c in coords:
        h = _mix64((h + _GOLDEN + (int(c) & _M64)) & _M64)
    return h


@dataclass(frozen=True)
class RngStream:
    """A deterministic random stream addressed by (seed, coords)."""

    seed: int
    coords: tuple[int, ...] = ()

    def at(self, *coords: int) -> "RngStream":
        """Child stream with extra coordinates appended."""
        return RngStream(self.seed, self.coords + tuple(int(c) for c in coords))

    def generator(self) -> np.random.Generator:
        w1 = _fold(self.seed, self.coords)
        w2 = _mix64(w1 + _GOLDEN)
        w3 = _mix64(w2 + _GOLDEN)
        counter = np.array([0, w1, w2, w3], dtype=np.uint64)
        key = np.array([self.seed & _M64, _mix64(self.seed + 1)], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(counter=counter, key=key))

    # -- field draws (one fresh generator per call, so order never matters) --

    def uniform(self, shape=None) -> np.ndarray | float:
        g = self.generator()
        return g.random() if shape is None else g.random(shape)

    def normal(self, shape=None) -> np.ndarray | float:
        g = self.generator()
        return g.standard_normal() if shape is None else g.standard_normal(shape)

    def integers(self, low: int, high: int, shape=None):
        """Uniform integers in [low, high] inclusive."""
        return self.generator().integers(low, high, size=shape, endpoint=True)

    def choice_no_replace(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n)."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct items from {n}")
        return self.generator().choice(n, size=k, replace=False)

    def gamma(self, shape_param: float, scale: float, shape=None):
        return self.generator().gamma(shape_param, scale, size=shape)


def sample_uniform(rng: RngStream, shape=None):
    return rng.uniform(shape)


def sample_normal(rng: RngStream, shape=None):
    return rng.normal(shape)


def _check_probs(probs: np.ndarray, axis: int) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs < 0):
        raise ValueError("categorical probabilities must be nonnegative")
    total = probs.sum(axis=axis)
    if np.any(np.abs(total - 1.0) > 1e-6):
        raise ValueError("categorical probabilities must sum to 1 within 1e-6")
    return probs


def sample_categorical(rng: RngStream, probs) -> int:
    """One categorical draw from a probability vector."""
    probs = _check_probs(np.asarray(probs), axis=-1)
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    u = rng.uniform()
    return int(np.searchsorted(cdf, u, side="right"))


def sample_categorical_field(rng: RngStream, probs: np.ndarray) -> np.ndarray:
    """Per-site categorical draws.

    probs has the category axis first: [K, ...sites]; returns int indices of
    shape [...sites], consuming exactly one uniform per site.
    """
    probs = _check_probs(np.asarray(probs), axis=0)
    cdf = np.cumsum(probs, axis=0)
    cdf /= cdf[-1:]
    u = rng.uniform(probs.shape[1:])
    idx = (u[None, ...] >= cdf).sum(axis=0)
    return np.minimum(idx, probs.shape[0] - 1).astype(np.int64)
