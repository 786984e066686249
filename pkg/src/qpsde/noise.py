"""Two-sided driving noise with counter-based, seekable increments.

Each path is a pure function of (seed, grid): the increment over
[k*dt, (k+1)*dt) is produced by hashing (seed, k, component) through a
splitmix64 finalizer and mapping the resulting uniform through the inverse
normal CDF.  There is no sequential generator state, so any index — in
either direction from the origin — can be sampled directly, and shifting a
path in time is a pure reindexing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class TimeGrid:
    """Uniform step grid; index k sits at time k * dt (two-sided)."""

    dt: float
    index_window: tuple[int, int] = (-(2 ** 40), 2 ** 40)

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ConfigError("grid.dt", f"must be finite and > 0, got {self.dt!r}")
        lo, hi = self.index_window
        if not (int(lo) < int(hi)):
            raise ConfigError("grid.index_window", f"empty window {self.index_window!r}")
        object.__setattr__(self, "index_window", (int(lo), int(hi)))

    @property
    def sqrt_dt(self) -> float:
        return math.sqrt(self.dt)

    def time_of(self, k: int) -> float:
        return k * self.dt


@dataclass(frozen=True)
class NoisePath:
    """One realization of two-sided d-dimensional driving noise.

    `offset` reindexes in grid steps: this path's increment at k is the
    seed's raw increment at k + offset.  Stateless; every query recomputes
    from the counter scheme, so reads are reproducible and order-free.
    """

    grid: TimeGrid
    seed: int
    dim: int = 1
    offset: int = 0
    _key: np.uint64 = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("noise.dim", f"must be >= 1, got {self.dim}")
        # np.uint64, not int: a Python int would be typed int64 at the
        # kernel boundary and promote the hash arithmetic to float64
        key = np.uint64(_kernels.key_of_seed(np.uint64(int(self.seed) & _SEED_MASK)))
        object.__setattr__(self, "_key", key)
        object.__setattr__(self, "offset", int(self.offset))

    def increment(self, k: int) -> np.ndarray:
        """N(0, dt * I) increment over [k*dt, (k+1)*dt), shape (dim,)."""
        out = np.empty((1, self.dim))
        _kernels.fill_increments(self._key, self.offset, int(k), 1,
                                 self.grid.sqrt_dt, out)
        return out[0]

    def increments(self, k0: int, k1: int) -> np.ndarray:
        """Increment rows for indices k0 .. k1-1, shape (k1-k0, dim)."""
        n = max(int(k1) - int(k0), 0)
        out = np.empty((n, self.dim))
        if n:
            _kernels.fill_increments(self._key, self.offset, int(k0), n,
                                     self.grid.sqrt_dt, out)
        return out

    def value(self, k: int) -> np.ndarray:
        """Path value at time k*dt, anchored so that value(0) == 0.

        Partial sums accumulate in ascending index order; negative k sums
        indices k..-1 and negates, so value(-1) == -increment(-1) exactly.
        """
        out = np.empty(self.dim)
        _kernels.sum_increments(self._key, self.offset, int(k), self.dim,
                                self.grid.sqrt_dt, out)
        return out

    def shifted(self, m: int) -> "NoisePath":
        """The same underlying noise viewed from m grid steps later.

        shifted(m).increment(k) equals increment(k + m) bitwise, and
        shifts compose additively: shifted(a).shifted(b) == shifted(a + b).
        """
        return NoisePath(self.grid, self.seed, self.dim, self.offset + int(m))


def shift(path: NoisePath, m: int) -> NoisePath:
    """Functional alias for NoisePath.shifted."""
    return path.shifted(m)
