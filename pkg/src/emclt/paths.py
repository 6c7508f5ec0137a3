"""Brownian paths on nested coarse/fine time grids.

Every path is generated from its own counter-based Philox stream keyed by
``(master_seed, path_index)``, so a path never depends on which other paths
were generated, or in what order.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TimeGrid",
    "BrownianPath",
    "sample_brownian",
    "sample_increments",
    "coarsen",
    "coarsen_increments",
    "derive_seed",
    "path_generator",
]

DEFAULT_REFINEMENT = 64
# fine indices are stored in int32 inside the compiled kernels
MAX_FINE_STEPS = 2**31 - 1
_U64 = 2**64


@dataclass(frozen=True)
class TimeGrid:
    """Coarse grid with ``n`` steps on [0, 1], refined ``M`` times."""

    n: int
    M: int = DEFAULT_REFINEMENT

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M!r}")
        if self.n * self.M > MAX_FINE_STEPS:
            raise OverflowError(
                f"n*M = {self.n * self.M} exceeds the fine index range ({MAX_FINE_STEPS})"
            )

    @property
    def n_fine(self) -> int:
        return self.n * self.M

    @property
    def h_fine(self) -> float:
        return 1.0 / self.n_fine

    @property
    def h_coarse(self) -> float:
        return 1.0 / self.n

    def fine_times(self) -> np.ndarray:
        return np.arange(self.n_fine + 1) / self.n_fine

    def coarse_times(self) -> np.ndarray:
        return np.arange(self.n + 1) / self.n

    def kappa(self, t):
        """``floor(n t) / n``; exact at fine nodes (computed from the integer index)."""
        t = np.asarray(t, dtype=float)
        j = np.rint(t * self.n_fine).astype(np.int64)
        on_grid = np.abs(j / self.n_fine - t) <= 1e-14
        k = np.where(on_grid, j // self.M, np.floor(t * self.n).astype(np.int64))
        return k / self.n

    def kappa_index(self) -> np.ndarray:
        """Fine index of kappa_n(t_j) for every fine node j."""
        j = np.arange(self.n_fine + 1)
        return (j // self.M) * self.M

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.n, self.M * factor)


@dataclass(frozen=True)
class BrownianPath:
    """Increments of a d-dimensional Brownian motion on a uniform grid of [0, 1]."""

    increments: np.ndarray
    seed_lineage: tuple = field(default=(None, None))

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 2 or inc.shape[0] < 1 or inc.shape[1] < 1:
            raise ValueError(f"increments must have shape (steps, d), got {inc.shape}")
        inc = inc.copy()
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def d(self) -> int:
        return self.increments.shape[1]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.n_steps

    @property
    def values(self) -> np.ndarray:
        """B at every node, starting from B_0 = 0."""
        out = np.zeros((self.n_steps + 1, self.d))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) / self.n_steps

    def coarsen(self, factor: int) -> "BrownianPath":
        return coarsen(self, factor)


def derive_seed(seed: int, *tags) -> int:
    """Independent 64-bit master seed for a named sub-stream of ``seed``."""
    seed = _check_seed(seed)
    words = [zlib.crc32(str(t).encode()) for t in tags]
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(words))
    return int(ss.generate_state(1, np.uint64)[0])


def path_generator(seed: int, index: int) -> np.random.Generator:
    """Philox generator keyed by the lineage (seed, index)."""
    seed = _check_seed(seed)
    index = int(index)
    if not 0 <= index < _U64:
        raise ValueError(f"path index out of range: {index}")
    key = np.array([seed, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_brownian(grid: TimeGrid, d: int, lineage: tuple[int, int]) -> BrownianPath:
    seed, index = lineage
    inc = sample_increments(grid.n_fine, d, seed, [index])[0]
    return BrownianPath(inc, (int(seed), int(index)))


def sample_increments(n_steps: int, d: int, seed: int, indices) -> np.ndarray:
    """Stacked increments of shape (len(indices), n_steps, d) for a bank of paths.

    Row ``i`` is bit-identical to ``sample_brownian(..., (seed, indices[i]))``.
    """
    if int(d) != d or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d!r}")
    if n_steps < 1 or n_steps > MAX_FINE_STEPS:
        raise OverflowError(f"step count out of range: {n_steps}")
    indices = np.atleast_1d(np.asarray(indices, dtype=np.int64))
    out = np.empty((len(indices), n_steps, d))
    scale = np.sqrt(1.0 / n_steps)
    for row, idx in enumerate(indices):
        gen = path_generator(seed, int(idx))
        gen.standard_normal(out=out[row])
    out *= scale
    return out


def coarsen_increments(increments: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive blocks of ``factor`` increments along the step axis (-2)."""
    factor = int(factor)
    steps = increments.shape[-2]
    if factor < 1 or steps % factor:
        raise ValueError(f"factor {factor} does not divide the step count {steps}")
    if factor == 1:
        return increments.copy()
    shape = increments.shape[:-2] + (steps // factor, factor, increments.shape[-1])
    return increments.reshape(shape).sum(axis=-2)


def coarsen(path: BrownianPath, factor: int) -> BrownianPath:
    return BrownianPath(coarsen_increments(path.increments, factor), path.seed_lineage)


def _check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed < _U64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed
