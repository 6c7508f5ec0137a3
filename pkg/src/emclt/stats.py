"""Monte Carlo estimators: L_p norms, log-log rate fits, one-dimensional distances."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _st

from .parallel import concat_batches

__all__ = [
    "LpEstimate",
    "lp_norm",
    "lp_norm_mc",
    "RateFit",
    "rate_fit",
    "DegenerateFitError",
    "wasserstein1",
    "ks_statistic",
    "w1_standard_error",
    "w1_sampling_floor",
]


@dataclass(frozen=True)
class LpEstimate:
    value: float
    se: float
    p: float
    n_samples: int


def lp_norm(samples, p: float = 2.0) -> LpEstimate:
    """``(E|Y|^p)^{1/p}`` with a delta-method standard error.

    Rows of a 2-d array are treated as samples and reduced with the Euclidean norm.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    y = np.asarray(samples, dtype=float)
    if y.ndim > 1:
        y = np.linalg.norm(y.reshape(y.shape[0], -1), axis=1)
    if y.shape[0] < 2:
        raise ValueError("need at least two samples")
    if not np.isfinite(y).all():
        bad = int(np.flatnonzero(~np.isfinite(y))[0])
        raise FloatingPointError(f"non-finite sample at position {bad}")
    z = np.abs(y) ** p
    m = z.mean()
    se_m = z.std(ddof=1) / np.sqrt(len(z))
    value = m ** (1.0 / p)
    se = value / (p * m) * se_m if m > 0 else 0.0
    return LpEstimate(float(value), float(se), p, len(z))


def lp_norm_mc(sampler, p: float, n_paths: int, batch_size: int = 1024, threads=None) -> LpEstimate:
    """L_p norm of a path functional; ``sampler(indices)`` returns one value per index."""
    if n_paths < 2:
        raise ValueError("need at least two paths")
    values = concat_batches(lambda idx: np.asarray(sampler(idx), dtype=float), n_paths, batch_size, threads)
    finite = np.isfinite(values.reshape(values.shape[0], -1)).all(axis=1)
    if not finite.all():
        raise FloatingPointError(f"non-finite sample from path index {int(np.flatnonzero(~finite)[0])}")
    return lp_norm(values, p)


class DegenerateFitError(ValueError):
    """Errors are zero or the fit has too few points."""


@dataclass(frozen=True)
class RateFit:
    ns: np.ndarray
    errors: np.ndarray
    ses: np.ndarray
    slope: float
    intercept: float
    r_squared: float
    slope_se: float
    slope_ci: tuple = field(default=(np.nan, np.nan))

    def as_rows(self):
        return [
            {"n": int(n), "error": float(e), "se": float(s)}
            for n, e, s in zip(self.ns, self.errors, self.ses)
        ]


def rate_fit(ns, errors, ses=None, level: float = 0.95) -> RateFit:
    """Least squares of log(error) on log(n).

    With standard errors the fit is weighted by ``(error/se)^2`` and the slope
    interval uses the known variances; without them it is ordinary least squares
    with a Student-t interval.
    """
    ns = np.asarray(ns, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(ns) < 3:
        raise DegenerateFitError(f"a rate fit needs at least 3 points, got {len(ns)}")
    if np.any(np.diff(ns) <= 0):
        raise ValueError("ns must be strictly increasing")
    if np.any(~(errors > 0)):
        raise DegenerateFitError("errors must be strictly positive")
    x, y = np.log(ns), np.log(errors)
    known = ses is not None and np.all(np.asarray(ses) > 0)
    if known:
        ses = np.asarray(ses, dtype=float)
        w = (errors / ses) ** 2
    else:
        ses = np.zeros_like(errors) if ses is None else np.asarray(ses, dtype=float)
        w = np.ones_like(x)
    X = np.stack([np.ones_like(x), x], axis=1)
    WX = X * w[:, None]
    cov = np.linalg.inv(X.T @ WX)
    intercept, slope = cov @ (WX.T @ y)
    resid = y - (intercept + slope * x)
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = np.sum(w * (y - ybar) ** 2)
    r2 = 1.0 - np.sum(w * resid**2) / ss_tot if ss_tot > 0 else 1.0
    dof = len(x) - 2
    if known:
        slope_se = float(np.sqrt(cov[1, 1]))
        q = _st.norm.ppf(0.5 + level / 2)
    else:
        s2 = np.sum(resid**2) / dof
        slope_se = float(np.sqrt(s2 * cov[1, 1]))
        q = _st.t.ppf(0.5 + level / 2, dof)
    return RateFit(ns, errors, ses, float(slope), float(intercept), float(min(max(r2, 0.0), 1.0)),
                   slope_se, (float(slope - q * slope_se), float(slope + q * slope_se)))


def _ecdf_grid(x, y):
    x = np.sort(np.asarray(x, dtype=float).ravel())
    y = np.sort(np.asarray(y, dtype=float).ravel())
    allv = np.concatenate([x, y])
    allv.sort(kind="mergesort")
    Fx = np.searchsorted(x, allv, side="right") / len(x)
    Fy = np.searchsorted(y, allv, side="right") / len(y)
    return allv, Fx, Fy


def wasserstein1(x, y) -> float:
    """W1 between two empirical laws on the line: integral of |F_x - F_y|."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if len(x) == len(y):
        return float(np.mean(np.abs(np.sort(x) - np.sort(y))))
    allv, Fx, Fy = _ecdf_grid(x, y)
    return float(np.sum(np.abs(Fx - Fy)[:-1] * np.diff(allv)))


def ks_statistic(x, y) -> float:
    """Two-sample Kolmogorov--Smirnov statistic sup |F_x - F_y|."""
    _, Fx, Fy = _ecdf_grid(x, y)
    return float(np.max(np.abs(Fx - Fy)))


def w1_standard_error(x, y, n_boot: int = 100, seed: int = 0) -> float:
    """Bootstrap standard error of the two-sample W1 estimate."""
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0x5E], dtype=np.uint64)))
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    reps = np.empty(n_boot)
    for b in range(n_boot):
        reps[b] = wasserstein1(x[rng.integers(0, len(x), len(x))], y[rng.integers(0, len(y), len(y))])
    return float(reps.std(ddof=1))


def w1_sampling_floor(x, y, n_perm: int = 50, seed: int = 0) -> float:
    """Mean W1 between random splits of the pooled sample (the value expected under equal laws)."""
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0xF1], dtype=np.uint64)))
    pooled = np.concatenate([np.asarray(x, float).ravel(), np.asarray(y, float).ravel()])
    nx = np.asarray(x).size
    vals = np.empty(n_perm)
    for k in range(n_perm):
        perm = rng.permutation(pooled)
        vals[k] = wasserstein1(perm[:nx], perm[nx:])
    return float(vals.mean())
