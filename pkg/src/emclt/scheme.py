"""Euler--Maruyama scheme, fine-grid reference solution, fluctuation and area processes.

All processes of one sample are coupled through a single Brownian path on
the fine grid of ``TimeGrid(n, M)``: the scheme with ``n`` steps uses the
block sums of the fine increments, the reference solution uses them all.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .models import ModelSpec
from .paths import BrownianPath, TimeGrid

__all__ = [
    "SchemeError",
    "SamplePath",
    "FluctuationBundle",
    "euler_maruyama",
    "scheme_path",
    "reference_solution",
    "fluctuation",
    "area_process",
    "area_increments",
    "build_bundle",
    "run_frozen",
]


class SchemeError(RuntimeError):
    """A coefficient evaluated to a non-finite value along a path."""


@dataclass(frozen=True)
class SamplePath:
    values: np.ndarray
    grid: TimeGrid
    level: str = "fine"

    def __post_init__(self):
        expected = (self.grid.n_fine if self.level == "fine" else self.grid.n) + 1
        if self.values.shape[0] != expected:
            raise ValueError(f"{self.level} path needs {expected} nodes, got {self.values.shape[0]}")

    @property
    def times(self) -> np.ndarray:
        return self.grid.fine_times() if self.level == "fine" else self.grid.coarse_times()


@dataclass(frozen=True)
class FluctuationBundle:
    x_ref: SamplePath
    x_n: SamplePath
    v_n: SamplePath
    w_n: np.ndarray
    n: int


def run_frozen(model: ModelSpec, dB: np.ndarray, M: int, x0=None) -> np.ndarray:
    """Fine-node values of the Euler scheme whose coefficients are frozen every ``M`` steps.

    ``dB`` has shape (P, N, d). ``M = 1`` is the plain Euler scheme on the
    fine grid; ``M = N / n`` gives the continuous-time interpolant of the
    n-step scheme observed at fine nodes.
    """
    dB = np.ascontiguousarray(dB, dtype=float)
    P, N, d = dB.shape
    if d != model.d:
        raise ValueError(f"Brownian dimension {d} does not match model dimension {model.d}")
    if N % M:
        raise ValueError(f"block length {M} does not divide {N} fine steps")
    x0 = np.broadcast_to(model.x0 if x0 is None else x0, (P, d)).astype(float)
    spec = model.kernel_spec()
    if spec is not None:
        X, bad_path, bad_step = _kernels.em_fine(np.ascontiguousarray(x0), dB, M, *spec)
    else:
        X, bad_path, bad_step = _run_frozen_numpy(model, x0, dB, M)
    if bad_path >= 0:
        raise SchemeError(
            f"non-finite drift/diffusion on path {bad_path} at coarse step {bad_step}"
        )
    return X


def _run_frozen_numpy(model, x0, dB, M):
    P, N, d = dB.shape
    n = N // M
    h = 1.0 / N
    X = np.empty((P, N + 1, d))
    X[:, 0] = x0
    ramp = (np.arange(1, M + 1) * h)[None, :, None]
    xk = x0.copy()
    for k in range(n):
        b = model.drift(xk)
        S = model.diffusion(xk)
        ok = np.isfinite(b).all(axis=-1) & np.isfinite(S).all(axis=(-1, -2))
        if not ok.all():
            return X, int(np.flatnonzero(~ok)[0]), k
        block = np.cumsum(dB[:, k * M : (k + 1) * M], axis=1)
        X[:, k * M + 1 : (k + 1) * M + 1] = (
            xk[:, None, :] + b[:, None, :] * ramp + np.einsum("pij,pmj->pmi", S, block)
        )
        xk = X[:, (k + 1) * M].copy()
    return X, -1, -1


def _split(path: BrownianPath, level: int) -> TimeGrid:
    N = path.n_steps
    if level < 1 or N % level:
        raise ValueError(f"level {level} does not divide the {N} steps of the Brownian path")
    return TimeGrid(level, N // level)


def euler_maruyama(model: ModelSpec, path: BrownianPath, level: int) -> SamplePath:
    """``level``-step Euler scheme driven by ``path``, returned at its own nodes."""
    grid = _split(path, level)
    X = run_frozen(model, path.increments[None], grid.M)[0]
    return SamplePath(X[:: grid.M].copy(), grid, "coarse")


def scheme_path(model: ModelSpec, path: BrownianPath, n: int) -> SamplePath:
    """The n-step scheme as a continuous-time process, observed at every fine node."""
    grid = _split(path, n)
    return SamplePath(run_frozen(model, path.increments[None], grid.M)[0], grid, "fine")


def reference_solution(model: ModelSpec, path: BrownianPath, n: int | None = None) -> SamplePath:
    """Proxy for the exact solution: the Euler scheme on the full fine grid.

    ``n`` only labels the returned grid (so it pairs with ``scheme_path``).
    """
    N = path.n_steps
    grid = _split(path, n) if n is not None else TimeGrid(N, 1)
    return SamplePath(run_frozen(model, path.increments[None], 1)[0], grid, "fine")


def fluctuation(ref: SamplePath, xn: SamplePath, n: int) -> SamplePath:
    if ref.level != "fine" or xn.level != "fine" or ref.values.shape != xn.values.shape:
        raise ValueError("fluctuation needs two fine-level paths on the same grid")
    if ref.grid.n_fine != xn.grid.n_fine:
        raise ValueError("grid mismatch between reference and scheme paths")
    return SamplePath(np.sqrt(n) * (ref.values - xn.values), xn.grid, "fine")


def area_increments(dB: np.ndarray, n: int) -> np.ndarray:
    """Fine-step increments of ``sqrt(2n) int (B_r - B_kappa(r)) (x) dB_r``.

    ``dB``: (..., N, d).  Returns (..., N, d, d) with entry ``[k, i]`` built from
    ``B^k`` (integrand) and ``dB^i`` (integrator), left-point sums.
    """
    N, d = dB.shape[-2:]
    if N % n:
        raise ValueError(f"n = {n} does not divide {N} fine steps")
    M = N // n
    blocks = dB.reshape(dB.shape[:-2] + (n, M, d))
    before = np.cumsum(blocks, axis=-2) - blocks  # B_r - B_kappa(r) at the left point
    before = before.reshape(dB.shape)
    return np.sqrt(2.0 * n) * before[..., :, None] * dB[..., None, :]


def area_process(path: BrownianPath, n: int) -> np.ndarray:
    """W^n at every fine node, shape (N + 1, d, d), starting at 0."""
    grid = _split(path, n)
    if grid.M == 1:
        warnings.warn("area process with M = 1: every left point is a coarse node, W^n vanishes",
                      RuntimeWarning, stacklevel=2)
    inc = area_increments(path.increments, n)
    out = np.zeros((path.n_steps + 1, path.d, path.d))
    np.cumsum(inc, axis=0, out=out[1:])
    return out


def build_bundle(model: ModelSpec, path: BrownianPath, n: int) -> FluctuationBundle:
    ref = reference_solution(model, path, n)
    xn = scheme_path(model, path, n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        w = area_process(path, n)
    return FluctuationBundle(ref, xn, fluctuation(ref, xn, n), w, n)
