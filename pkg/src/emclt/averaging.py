"""Averaging of irregular drifts along a path: f -> int_0^t grad f(X_s) ds.

For a drift that is only Hoelder continuous the pointwise gradient does not
exist, but its time integral along a non-degenerate diffusion path does.  We
realise it as the limit of the same integral for Gaussian mollifications
``f_delta`` and expose a dyadic Hoelder-seminorm estimator to check that the
result stays regular as ``delta`` shrinks.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .models import ConstantDrift, Drift, LacunaryHolderDrift, LinearDrift, SumDrift

__all__ = [
    "GaussianMollified",
    "mollify",
    "default_delta",
    "OccupationDerivative",
    "qx_operator",
    "qx_increments",
    "HolderSeminormEstimate",
    "holder_seminorm",
]

_CHUNK = 1 << 16


def default_delta(n: int) -> float:
    """Mollification scale tied to the scheme: the typical size of one Euler increment."""
    return float(n) ** -0.5


@dataclass(frozen=True, eq=False)
class GaussianMollified(Drift):
    """``f_delta(x) = E f(x + delta Z)`` by tensor Gauss--Hermite quadrature.

    The gradient uses Gaussian integration by parts,
    ``grad f_delta(x) = E[f(x + delta Z) Z^T] / delta``, so ``f`` itself need
    not be differentiable.
    """

    base: Drift
    delta: float
    n_nodes: int = 40

    regularity = "C^inf"

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("GaussianMollified needs delta > 0")
        z, w = hermegauss(self.n_nodes)
        w = w / np.sqrt(2 * np.pi)
        grids = np.meshgrid(*([z] * self.d), indexing="ij")
        wgrid = np.ones_like(grids[0])
        for g in np.meshgrid(*([w] * self.d), indexing="ij"):
            wgrid = wgrid * g
        object.__setattr__(self, "_nodes", np.stack([g.ravel() for g in grids], axis=-1))
        object.__setattr__(self, "_weights", wgrid.ravel())

    @property
    def d(self):
        return self.base.d

    @property
    def name(self):
        return f"{self.base.name} * gauss(delta={self.delta:g})"

    def _apply(self, x, with_grad):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, self.d)
        val = np.empty_like(flat)
        grad = np.empty((flat.shape[0], self.d, self.d)) if with_grad else None
        z, w = self._nodes, self._weights
        for s in range(0, flat.shape[0], _CHUNK):
            pts = flat[s : s + _CHUNK, None, :] + self.delta * z[None]
            fv = self.base(pts)  # (chunk, Q, d)
            val[s : s + _CHUNK] = np.einsum("q,cql->cl", w, fv)
            if with_grad:
                grad[s : s + _CHUNK] = np.einsum("q,cql,qj->clj", w, fv, z) / self.delta
        if with_grad:
            return grad.reshape(x.shape + (self.d,))
        return val.reshape(x.shape)

    def __call__(self, x):
        return self._apply(x, False)

    def grad(self, x):
        return self._apply(x, True)


def mollify(drift: Drift, delta: float) -> Drift:
    """Gaussian mollification at scale ``delta``; ``delta = 0`` returns ``drift`` itself.

    Affine drifts are returned unchanged, lacunary series are damped in closed
    form, anything else goes through Gauss--Hermite quadrature.
    """
    if delta < 0:
        raise ValueError(f"delta must be non-negative, got {delta}")
    if delta == 0 or isinstance(drift, (ConstantDrift, LinearDrift)):
        return drift
    if isinstance(drift, LacunaryHolderDrift):
        return drift.mollified(delta)
    if isinstance(drift, SumDrift):
        return SumDrift(tuple(mollify(p, delta) for p in drift.parts))
    return GaussianMollified(drift, float(delta))


@dataclass(frozen=True)
class OccupationDerivative:
    """``values[..., t, l, j] = int_0^t d_j b_delta^l(X_s) ds`` at the fine nodes."""

    values: np.ndarray
    delta: float
    source: str = ""

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=-3)


def qx_increments(drift: Drift, x: np.ndarray, delta: float) -> np.ndarray:
    """Left-point increments ``grad b_delta(X_{t_j}) h``; ``x`` has shape (..., N + 1, d)."""
    smooth = mollify(drift, delta)
    h = 1.0 / (x.shape[-2] - 1)
    g = smooth.grad(x[..., :-1, :])
    if not np.isfinite(g).all():
        raise FloatingPointError("non-finite gradient of the mollified drift along the path")
    return g * h


def qx_operator(drift: Drift, x_path, delta: float) -> OccupationDerivative:
    """``(Q^X b)_t`` for a sampled path (``SamplePath`` or array (..., N + 1, d))."""
    x = np.asarray(getattr(x_path, "values", x_path), dtype=float)
    inc = qx_increments(drift, x, delta)
    out = np.zeros(x.shape[:-1] + (x.shape[-1], x.shape[-1]))
    np.cumsum(inc, axis=-3, out=out[..., 1:, :, :])
    return OccupationDerivative(out, float(delta), f"{drift.name} along X")


@dataclass(frozen=True)
class HolderSeminormEstimate:
    exponent: float
    value: float | np.ndarray
    scales_used: list = field(default_factory=list)
    degenerate: bool = False


def holder_seminorm(path, exponent: float, max_gap: float = 1.0, axis: int = 0):
    """``max |p_t - p_s| / |t - s|^gamma`` over node pairs at dyadic gaps ``<= max_gap``.

    ``path`` lives on a uniform grid of [0, 1] along ``axis``; trailing axes
    are point coordinates (their Euclidean norm is used).  Leading axes before
    ``axis`` are batch axes and give one value per batch entry.
    """
    if not 0 < exponent <= 1:
        raise ValueError(f"exponent must lie in (0, 1], got {exponent}")
    p = np.asarray(getattr(path, "values", path), dtype=float)
    p = np.moveaxis(p, axis, 0)
    nodes = p.shape[0]
    batch_shape = ()
    if axis > 0:
        batch_shape = p.shape[1 : 1 + axis]
    if nodes < 2:
        return HolderSeminormEstimate(exponent, np.zeros(batch_shape) if batch_shape else 0.0, [], True)
    h = 1.0 / (nodes - 1)
    best = np.zeros(batch_shape)
    gaps = []
    g = 1
    while g < nodes and g * h <= max_gap * (1 + 1e-12):
        diff = p[g:] - p[:-g]
        size = diff.reshape(diff.shape[: 1 + axis] + (-1,))
        norms = np.sqrt(np.sum(size * size, axis=-1))
        best = np.maximum(best, norms.max(axis=0) / (g * h) ** exponent)
        gaps.append(g * h)
        g *= 2
    value = best if batch_shape else float(best)
    return HolderSeminormEstimate(exponent, value, gaps, False)
