"""Monte Carlo experiments: rates, averaging stability, area identity, CLT trends.

Every experiment is a pure function of its arguments and ``seed``: each
Brownian bank is drawn from its own derived sub-stream, paths inside a bank
from per-path Philox keys, and batches are reduced in a fixed order.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .averaging import default_delta, holder_seminorm, qx_increments
from .limit_holder import solve_limit_bank
from .models import BumpDrift, Drift, LacunaryHolderDrift, ModelSpec
from .parallel import concat_batches
from .paths import derive_seed, sample_increments
from .scheme import area_increments, run_frozen
from .stats import (DegenerateFitError, LpEstimate, ks_statistic, lp_norm, rate_fit,
                    w1_sampling_floor, w1_standard_error, wasserstein1)
from .zvonkin import solve_corrector_pde, solve_limit_sobolev

__all__ = [
    "RateExperiment",
    "step_size_experiment",
    "strong_rate_experiment",
    "quadrature_experiment",
    "QUADRATURE_F",
    "QUADRATURE_G",
    "area_check",
    "qx_stability",
    "DistributionReport",
    "limit_bank",
    "scheme_bank",
    "clt_experiment",
    "trend_ok",
    "pipeline_consistency",
]

DEGENERATE_TOL = 1e-12


def _batch_size(n_steps: int, d: int, budget: float = 3e7) -> int:
    return int(max(8, min(4096, budget // ((n_steps + 1) * d * 3))))


@dataclass
class RateExperiment:
    """L_p errors per n and their log-log fit (``fit`` is None when degenerate)."""

    ns: list
    estimates: list
    fit: object = None
    degenerate: bool = False
    label: str = ""

    def rows(self):
        out = []
        for n, est in zip(self.ns, self.estimates):
            out.append({"n": int(n), "error": est.value, "se": est.se})
        return out

    def summary(self):
        s = {"label": self.label, "degenerate": self.degenerate}
        if self.fit is not None:
            s.update(slope=self.fit.slope, intercept=self.fit.intercept, r_squared=self.fit.r_squared,
                     slope_ci=list(self.fit.slope_ci))
        return s


def _finish(ns, estimates, label, scale=1.0):
    errors = np.array([e.value for e in estimates])
    if np.all(errors <= DEGENERATE_TOL * scale):
        return RateExperiment(list(ns), estimates, None, True, label)
    try:
        fit = rate_fit(ns, errors, [e.se for e in estimates])
    except DegenerateFitError:
        return RateExperiment(list(ns), estimates, None, True, label)
    return RateExperiment(list(ns), estimates, fit, False, label)


def _check_ns(ns):
    ns = [int(n) for n in ns]
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ValueError("ns must be increasing")
    return ns


def _per_n(model, n, M, n_paths, seed, tag, fn, threads, batch=None):
    N = n * M
    s = derive_seed(seed, tag, n)

    def work(idx):
        dB = sample_increments(N, model.d, s, idx)
        return fn(dB)

    return concat_batches(work, n_paths, batch or _batch_size(N, model.d), threads)


def step_size_experiment(model: ModelSpec, ns, p=2.0, n_paths=10_000, M=64, seed=0, threads=None):
    """``|| sup_t |X^n_t - X^n_kappa(t)| ||_{L_p}`` per n (``.inside``) and
    ``sup_t || X^n_t - X^n_kappa(t) ||_{L_p}`` (``.outside``)."""
    ns = _check_ns(ns)
    inside, outside = [], []
    for n in ns:
        def fn(dB):
            X = run_frozen(model, dB, M)
            frozen = np.repeat(X[:, :-1:M], M, axis=1)
            gap = np.linalg.norm(X[:, 1:] - frozen, axis=-1)  # (P, N)
            z = gap**p
            # per-time moment sums keep memory at O(N) per batch
            return gap.max(axis=1), z.sum(axis=0)[None], (z * z).sum(axis=0)[None]
        sup, s1, s2 = _per_n(model, n, M, n_paths, seed, "step-size", fn, threads)
        inside.append(lp_norm(sup, p))
        m = s1.sum(axis=0) / n_paths
        j = int(np.argmax(m))
        var = max(s2.sum(axis=0)[j] / n_paths - m[j] ** 2, 0.0) * n_paths / (n_paths - 1)
        value = m[j] ** (1.0 / p)
        se = value / (p * m[j]) * np.sqrt(var / n_paths) if m[j] > 0 else 0.0
        outside.append(LpEstimate(float(value), float(se), p, n_paths))
    return (_finish(ns, inside, "sup inside the L_p norm"),
            _finish(ns, outside, "sup over t of the L_p norm"))


def strong_rate_experiment(model: ModelSpec, ns, p=2.0, n_paths=10_000, M=64, seed=0, threads=None):
    """``|| sup_t |X_t - X^n_t| ||_{L_p}`` with X the Euler proxy on the n M grid."""
    ns = _check_ns(ns)
    ests = []
    for n in ns:
        def fn(dB):
            ref = run_frozen(model, dB, 1)
            xn = run_frozen(model, dB, M)
            return _kernels.sup_abs_diff(ref, xn) if model.d == 1 else \
                np.linalg.norm(ref - xn, axis=-1).max(axis=1)
        ests.append(lp_norm(_per_n(model, n, M, n_paths, seed, "strong", fn, threads), p))
    return _finish(ns, ests, "strong sup error")


def quadrature_experiment(model: ModelSpec, g, f, ns, p=2.0, n_paths=10_000, M=64, seed=0,
                          threads=None, label="quadrature"):
    """L_p norm of ``int_0^1 g(r, X^n_r) (f(X^n_r) - f(X^n_kappa(r))) dr`` per n.

    ``g(t, x)`` returns one weight per point (shape ``x.shape[:-1]``),
    ``f(x)`` returns ``(..., m)``; the integral is a left-point sum on the fine grid.
    """
    ns = _check_ns(ns)
    ests = []
    for n in ns:
        N = n * M
        t = np.arange(N) / N

        def fn(dB):
            X = run_frozen(model, dB, M)[:, :-1]
            fx = np.asarray(f(X), dtype=float)
            if fx.ndim == X.ndim - 1:
                fx = fx[..., None]
            fk = np.repeat(fx[:, ::M], M, axis=1)
            w = np.asarray(g(t[None, :], X), dtype=float)
            integral = np.sum(w[..., None] * (fx - fk), axis=1) / N
            return np.linalg.norm(integral, axis=-1)

        ests.append(lp_norm(_per_n(model, n, M, n_paths, seed, "quadrature", fn, threads), p))
    return _finish(ns, ests, label)


def _one(t, x):
    return np.ones(np.shape(x)[:-1])


def _bump_weight(t, x):
    return BumpDrift(d=np.shape(x)[-1])(x)[..., 0]


# named integrands for configs: f(x) -> (..., m), g(t, x) -> (...)
QUADRATURE_F = {
    "holder-lacunary": LacunaryHolderDrift(),
    "c2-sin": np.sin,
    "constant": lambda x: np.ones_like(x),
}
QUADRATURE_G = {
    "one": _one,
    "sobolev-bump": _bump_weight,
}


def area_check(n=8, Ms=(16, 64, 256), n_paths=2_000, var_n=8, var_M=256, var_paths=100_000, seed=0,
               threads=None):
    """Diagonal closed-form residuals of W^n per coarse step, and Var(W^{n,(1,2)}_1) for d = 2."""
    rows = []
    residuals = []
    for M in Ms:
        N = n * M
        s = derive_seed(seed, "area-residual", M)

        def fn(dB):
            inc = area_increments(dB, n)  # (P, N, 1, 1)
            fine = inc[..., 0, 0].reshape(dB.shape[0], n, M).sum(axis=2)
            coarse = dB[..., 0].reshape(dB.shape[0], n, M).sum(axis=2)
            closed = np.sqrt(2.0 * n) * (coarse**2 - 1.0 / n) / 2
            return (fine - closed).ravel()

        res = concat_batches(lambda idx: fn(sample_increments(N, 1, s, idx)), n_paths,
                             _batch_size(N, 1), threads)
        est = lp_norm(res, 2.0)
        residuals.append(est)
        rows.append({"M": M, "n": n, "l2_residual": est.value, "se": est.se})
    fit = rate_fit(list(Ms), [e.value for e in residuals], [e.se for e in residuals])

    N = var_n * var_M
    s = derive_seed(seed, "area-variance")

    def terminal(idx):
        dB = sample_increments(N, 2, s, idx)
        blocks = dB.reshape(dB.shape[0], var_n, var_M, 2)
        before = (np.cumsum(blocks, axis=2) - blocks).reshape(dB.shape)
        return np.sqrt(2.0 * var_n) * np.einsum("pj,pj->p", before[..., 0], dB[..., 1])

    w12 = concat_batches(terminal, var_paths, _batch_size(N, 2), threads)
    var = float(w12.var(ddof=1))
    var_se = float(np.sqrt((np.mean((w12 - w12.mean()) ** 4) - var**2) / len(w12)))
    summary = {
        "residual_slope": fit.slope,
        "residual_r_squared": fit.r_squared,
        "var_w12": var,
        "var_w12_se": var_se,
        "var_w12_expected": 1.0 - 1.0 / var_M,
    }
    return rows, summary


def qx_stability(drift: Drift, model: ModelSpec, n_fine=2**16, n=1024, deltas=None, n_paths=64,
                 exponent=None, seed=0, threads=None):
    """Hoelder seminorm of ``Q^X b_delta`` and sup distances between successive halvings of delta.

    Both are reported as L_2 averages over ``n_paths`` reference paths.
    """
    if deltas is None:
        d0 = default_delta(n)
        deltas = [d0, d0 / 2, d0 / 4]
    alpha = getattr(drift, "alpha", 0.5)
    gamma = exponent if exponent is not None else (1 + alpha) / 2 - 0.05
    s = derive_seed(seed, "qx")

    def fn(idx):
        dB = sample_increments(n_fine, model.d, s, idx)
        X = run_frozen(model, dB, 1)
        paths = []
        for delta in deltas:
            inc = qx_increments(drift, X, delta)
            Q = np.zeros(X.shape[:2] + (model.d, model.d))
            np.cumsum(inc, axis=1, out=Q[:, 1:])
            paths.append(Q)
        semi = np.stack([holder_seminorm(Q, gamma, axis=1).value for Q in paths], axis=1)
        dist = np.stack([np.abs(a - b).reshape(a.shape[0], -1).max(axis=1)
                         for a, b in zip(paths, paths[1:])], axis=1)
        return semi, dist

    semi, dist = concat_batches(fn, n_paths, 8, threads)
    semi_l2 = np.sqrt(np.mean(semi**2, axis=0))
    dist_l2 = np.sqrt(np.mean(dist**2, axis=0))
    rows = [{"delta": float(dl), "seminorm": float(v)} for dl, v in zip(deltas, semi_l2)]
    summary = {
        "exponent": gamma,
        "deltas": [float(x) for x in deltas],
        "seminorm_l2": semi_l2.tolist(),
        "seminorm_ratio": float(semi_l2.max() / semi_l2.min()),
        "halving_distance_l2": dist_l2.tolist(),
        "cauchy_decreasing": bool(np.all(np.diff(dist_l2) < 0)),
    }
    return rows, summary


# ------------------------------------------------------------------ CLT

@dataclass
class DistributionReport:
    n: int
    sizes: tuple
    times: list
    ks: np.ndarray  # (times, d)
    w1: np.ndarray
    w1_se: np.ndarray
    floor: np.ndarray = field(default=None)

    def rows(self):
        out = []
        for a, t in enumerate(self.times):
            for c in range(self.ks.shape[1]):
                out.append({"n": self.n, "time": t, "coord": c, "ks": float(self.ks[a, c]),
                            "w1": float(self.w1[a, c]), "w1_se": float(self.w1_se[a, c]),
                            "floor": float(self.floor[a, c])})
        return out


def _node_index(times, N):
    idx = np.rint(np.asarray(times) * N).astype(int)
    if np.any(np.abs(idx / N - np.asarray(times)) > 1e-12):
        raise ValueError(f"evaluation times {times} are not nodes of a {N}-step grid")
    return idx


def _auto_delta(drift, n_equiv, delta):
    if delta is not None:
        return delta
    if str(getattr(drift, "regularity", "")).startswith("C^inf"):
        return 0.0
    return default_delta(n_equiv)


def limit_bank(model: ModelSpec, case="holder", n_paths=10_000, steps=2**14, times=(0.25, 0.5, 1.0),
               seed=0, delta=None, M=64, theta=4.0, pde_grid=None, threads=None, tag="limit"):
    """Marginals of the limit V at ``times``: array (n_paths, len(times), d).

    ``W`` is a fresh Brownian motion independent of the ``(X, B)`` bank.
    """
    idx_t = _node_index(times, steps)
    sB = derive_seed(seed, tag, "B")
    sW = derive_seed(seed, tag, "W")
    d = model.d
    if case == "holder":
        delta = _auto_delta(model.drift, steps // M, delta)
    elif case == "sobolev":
        pde = solve_corrector_pde(model, theta, **(pde_grid or {}))
    else:
        raise ValueError(f"unknown case {case!r}")

    def fn(idx):
        dB = sample_increments(steps, d, sB, idx)
        dW = sample_increments(steps, d * d, sW, idx).reshape(len(idx), steps, d, d)
        X = run_frozen(model, dB, 1)
        if case == "holder":
            V = solve_limit_bank(model, X, qx_increments(model.drift, X, delta), dB, dW)
        else:
            V = solve_limit_sobolev(model, pde, X, dB, dW).v
        return V[:, idx_t]

    return concat_batches(fn, n_paths, _batch_size(steps, d, 1e7), threads)


def scheme_bank(model: ModelSpec, n, n_paths=10_000, M=64, times=(0.25, 0.5, 1.0), seed=0,
                threads=None, tag="scheme"):
    """Marginals of ``V^n = sqrt(n) (X - X^n)`` at ``times``: (n_paths, len(times), d)."""
    N = n * M
    idx_t = _node_index(times, N)
    s = derive_seed(seed, tag, n)

    def fn(idx):
        dB = sample_increments(N, model.d, s, idx)
        ref = run_frozen(model, dB, 1)
        xn = run_frozen(model, dB, M)
        return np.sqrt(n) * (ref[:, idx_t] - xn[:, idx_t])

    return concat_batches(fn, n_paths, _batch_size(N, model.d), threads)


def _compare(a, b, n, times, seed, n_boot=100, n_perm=20):
    T, d = a.shape[1], a.shape[2]
    ks, w1, se, fl = (np.zeros((T, d)) for _ in range(4))
    for i in range(T):
        for c in range(d):
            x, y = a[:, i, c], b[:, i, c]
            ks[i, c] = ks_statistic(x, y)
            w1[i, c] = wasserstein1(x, y)
            se[i, c] = w1_standard_error(x, y, n_boot, seed)
            fl[i, c] = w1_sampling_floor(x, y, n_perm, seed)
    return DistributionReport(int(n), (a.shape[0], b.shape[0]), list(times), ks, w1, se, fl)


def trend_ok(values, ses, slack=2.0, atol=DEGENERATE_TOL) -> bool:
    """Nonincreasing up to ``slack`` combined standard errors between consecutive entries.

    Values below ``atol`` count as zero, so rounding-level distances pass.
    """
    v, s = np.asarray(values), np.asarray(ses)
    return bool(np.all(v[1:] <= v[:-1] + slack * np.sqrt(s[1:] ** 2 + s[:-1] ** 2) + atol))


def clt_experiment(model: ModelSpec, case="holder", ns=(16, 64, 256, 512), n_paths=10_000, M=64,
                   limit_steps=2**14, times=(0.25, 0.5, 1.0), seed=0, delta=None, theta=4.0,
                   threads=None, pde_grid=None):
    """Distances between the V^n marginals and the limit marginals for each n."""
    ns = _check_ns(ns)
    if n_paths < 1000:
        raise ValueError("the CLT experiment needs at least 1000 paths per bank")
    lim = limit_bank(model, case, n_paths, limit_steps, times, seed, delta, M, theta, pde_grid, threads)
    reports = []
    for n in ns:
        vn = scheme_bank(model, n, n_paths, M, times, seed, threads)
        if vn.shape[1:] != lim.shape[1:]:
            raise ValueError("dimension mismatch between banks")
        reports.append(_compare(vn, lim, n, times, seed))
    terminal = [r.w1[-1].max() for r in reports]
    terminal_se = [r.w1_se[-1][np.argmax(r.w1[-1])] for r in reports]
    summary = {
        "case": case,
        "ns": ns,
        "w1_terminal": terminal,
        "w1_terminal_se": terminal_se,
        "trend_ok": trend_ok(terminal, terminal_se),
        "ratio_last_first": terminal[-1] / terminal[0] if terminal[0] > 0 else float("nan"),
        "limit_std_terminal": float(lim[:, -1].std()),
    }
    return reports, summary


def pipeline_consistency(model: ModelSpec, n_paths=10_000, steps=2**14, theta=4.0, seed=0,
                         threads=None, pde_grid=None):
    """W1 between the Hoelder-pipeline and Sobolev-pipeline laws of V_1 (independent banks)."""
    with warnings.catch_warnings():
        a = limit_bank(model, "holder", n_paths, steps, (1.0,), seed, None, theta=theta, threads=threads,
                       tag="pipeline-holder")
        b = limit_bank(model, "sobolev", n_paths, steps, (1.0,), seed, None, theta=theta,
                       pde_grid=pde_grid, threads=threads, tag="pipeline-sobolev")
    x, y = a[:, 0, 0], b[:, 0, 0]
    w1 = wasserstein1(x, y)
    floor = w1_sampling_floor(x, y, 50, seed)
    return {"w1": w1, "floor": floor, "ratio": w1 / floor, "ks": ks_statistic(x, y),
            "std_holder": float(x.std()), "std_sobolev": float(y.std())}
