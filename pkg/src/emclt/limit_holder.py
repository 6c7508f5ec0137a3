"""Young integration and the hybrid Young--Ito limit equation for the fluctuations.

The limit of ``sqrt(n) (X - X^n)`` solves

    V_t = int_0^t dL_r V_r + int_0^t grad sigma(X_r) V_r dB_r
          + 2^{-1/2} int_0^t (sigma grad sigma)(X_r) dW_r,

where ``L`` is the averaged drift derivative (see ``emclt.averaging``) and
``W`` is a d x d Brownian motion independent of ``(X, B)``.  The ``dL``
integral is a Young integral; everything is advanced by one first-order
Euler loop.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import ModelSpec

__all__ = [
    "YoungConditionError",
    "YoungPair",
    "young_integral",
    "refinement_cascade",
    "synthetic_holder_path",
    "default_beta",
    "LimitSolutionHolder",
    "limit_coefficients",
    "solve_limit_holder",
    "solve_limit_bank",
    "voc_oracle_1d",
]

SQRT_HALF = np.sqrt(0.5)


class YoungConditionError(ValueError):
    pass


def default_beta(alpha: float) -> float:
    """Hoelder exponent recorded for the solution V (any value above (1 - alpha)/2 works)."""
    return min(0.45, (1 + alpha) / 2 - 0.05)


@dataclass(frozen=True)
class YoungPair:
    """Integrand ``Z`` (N + 1, d) and integrator ``L`` (N + 1, d, d) on a common uniform grid."""

    Z: np.ndarray
    L: np.ndarray
    beta: float
    theta: float
    force: bool = False

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        L = np.asarray(self.L, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if L.ndim == 1:
            L = L[:, None, None]
        if Z.shape[0] != L.shape[0] or L.shape[1:] != (Z.shape[1], Z.shape[1]):
            raise ValueError(f"incompatible shapes Z {Z.shape} and L {L.shape}")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "L", L)
        if not self.young and not self.force:
            raise YoungConditionError(
                f"beta + theta = {self.beta + self.theta:g} <= 1; pass force=True to integrate anyway"
            )

    @property
    def young(self) -> bool:
        return self.beta + self.theta > 1

    @property
    def n_steps(self) -> int:
        return self.Z.shape[0] - 1


def young_integral(pair: YoungPair, up_to: float = 1.0, stride: int = 1) -> np.ndarray:
    """Left-point sum ``sum_j dL_j Z_j`` over the nodes ``0, stride, 2 stride, ...`` up to ``up_to``."""
    N = pair.n_steps
    if stride < 1 or N % stride:
        raise ValueError(f"stride {stride} does not divide {N}")
    last = int(np.floor(up_to * N / stride + 1e-9)) * stride
    idx = np.arange(0, last + 1, stride)
    Z = pair.Z[idx]
    dL = np.diff(pair.L[idx], axis=0)
    return np.einsum("jlk,jk->l", dL, Z[:-1])


def synthetic_holder_path(N: int, H: float, seed: int, d: int = 1) -> np.ndarray:
    """Random Fourier path on ``N + 1`` nodes of [0, 1], Hoelder of every order below ``H``.

    Coefficients are complex Gaussians scaled by ``k^{-(H + 1/2)}``; only the
    first half of the period is kept so the path is not forced to be periodic.
    """
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0x40], dtype=np.uint64)))
    k = np.arange(1, N // 2 + 1)
    coef = np.zeros((N // 2 + 1, d), dtype=complex)
    amp = k[:, None] ** -(H + 0.5)
    coef[1:] = (rng.normal(size=(len(k), d)) + 1j * rng.normal(size=(len(k), d))) * amp
    p = np.fft.irfft(coef, n=2 * N, axis=0)[: N + 1] * N
    return p - p[0]


def refinement_cascade(pair: YoungPair, levels=None):
    """Differences ``|I_m - I_{m+1}|`` of sums over ``2^m`` intervals, and their fitted decay exponent.

    The exponent is minus the slope of ``log2 |I_m - I_{m+1}|`` against ``m``.
    """
    N = pair.n_steps
    top = int(np.log2(N))
    if 2**top != N:
        raise ValueError("refinement cascade needs 2^k steps")
    if levels is None:
        levels = range(2, top)
    levels = list(levels)
    sums = {m: young_integral(pair, 1.0, N // 2**m) for m in levels + [levels[-1] + 1]}
    diffs = np.array([np.linalg.norm(sums[m] - sums[m + 1]) for m in levels])
    slope = np.polyfit(levels, np.log2(diffs), 1)[0]
    return np.array(levels), diffs, float(-slope)


@dataclass(frozen=True)
class LimitSolutionHolder:
    v: np.ndarray
    drivers: dict = field(default_factory=dict)
    scheme_meta: dict = field(default_factory=dict)


def limit_coefficients(model: ModelSpec, x: np.ndarray, dB: np.ndarray, dW: np.ndarray):
    """Per-step Ito matrix ``G`` (..., N, d, d) and W-forcing ``F`` (..., N, d).

    ``G[l, j] = sum_i d_j sigma^{l,i} dB^i`` and
    ``F[l] = 2^{-1/2} sum_{i,j,k} sigma^{j,k} d_j sigma^{l,i} dW^{k,i}``.
    """
    xs = x[..., :-1, :]
    dsig = model.diffusion.grad(xs)
    sig = model.diffusion(xs)
    G = np.einsum("...lij,...i->...lj", dsig, dB)
    F = SQRT_HALF * np.einsum("...lij,...jk,...ki->...l", dsig, sig, dW)
    return G, F


def solve_limit_bank(model: ModelSpec, x, dL, dB, dW, order: str = "combined") -> np.ndarray:
    """Euler loop for V on a bank: ``x`` (P, N + 1, d), ``dL``/``dW`` (P, N, d, d), ``dB`` (P, N, d)."""
    x, dL, dB, dW = (np.asarray(a, dtype=float) for a in (x, dL, dB, dW))
    P, N1, d = x.shape
    N = N1 - 1
    if dL.shape != (P, N, d, d) or dB.shape != (P, N, d) or dW.shape != (P, N, d, d):
        raise ValueError(
            f"driver grid mismatch: x {x.shape}, L {dL.shape}, B {dB.shape}, W {dW.shape}"
        )
    G, F = limit_coefficients(model, x, dB, dW)
    V = np.zeros((P, N + 1, d))
    v = np.zeros((P, d))
    with np.errstate(over="ignore", invalid="ignore"):
        if d == 1:
            a_l, a_g, f = dL[..., 0, 0], G[..., 0, 0], F[..., 0]
            a_sum = a_l + a_g
            vv = np.zeros(P)
            for j in range(N):
                if order == "combined":
                    vv = vv + a_sum[:, j] * vv + f[:, j]
                else:
                    vv = ((vv + a_l[:, j] * vv) + a_g[:, j] * vv) + f[:, j]
                V[:, j + 1, 0] = vv
        else:
            A = dL + G
            for j in range(N):
                if order == "combined":
                    v = v + np.einsum("plj,pj->pl", A[:, j], v) + F[:, j]
                else:
                    t = v + np.einsum("plj,pj->pl", dL[:, j], v)
                    t = t + np.einsum("plj,pj->pl", G[:, j], v)
                    v = t + F[:, j]
                V[:, j + 1] = v
    bad = ~np.isfinite(V).all(axis=(0, 2))
    if bad.any():
        raise FloatingPointError(f"limit solution became non-finite at step {int(np.flatnonzero(bad)[0])}")
    return V


def solve_limit_holder(model: ModelSpec, x_ref, L, B, W, order: str = "combined",
                       w_provenance: str = "independent") -> LimitSolutionHolder:
    """Single-path solve.  ``x_ref``: SamplePath or (N + 1, d); ``L``: OccupationDerivative
    or (N + 1, d, d); ``B``: BrownianPath or increments (N, d); ``W``: path (N + 1, d, d)."""
    x = np.asarray(getattr(x_ref, "values", x_ref), dtype=float)
    Lv = np.asarray(getattr(L, "values", L), dtype=float)
    dB = np.asarray(getattr(B, "increments", B), dtype=float)
    Wv = np.asarray(W, dtype=float)
    if Wv.shape[0] == x.shape[0]:
        dW = np.diff(Wv, axis=0)
    else:
        dW = Wv
    V = solve_limit_bank(model, x[None], np.diff(Lv, axis=0)[None], dB[None], dW[None], order)[0]
    drivers = {"L_delta": getattr(L, "delta", None), "W": w_provenance}
    return LimitSolutionHolder(V, drivers, {"steps": x.shape[0] - 1, "order": order})


def voc_oracle_1d(model: ModelSpec, x, dB, dW) -> np.ndarray:
    """Terminal value of the d = 1 limit equation by variation of constants.

    ``V_1 = Phi_1 int_0^1 Phi_s^{-1} 2^{-1/2} (sigma sigma')(X_s) dW_s`` with
    ``Phi_t = exp(int b'(X) ds + int sigma'(X) dB - 1/2 int sigma'(X)^2 ds)``.
    Accepts a single path ((N + 1, 1) etc.) or a bank with a leading axis.
    """
    if model.d != 1:
        raise ValueError("the variation-of-constants oracle is one-dimensional")
    x = np.asarray(getattr(x, "values", x), dtype=float)
    single = x.ndim == 2
    if single:
        x, dB, dW = x[None], np.asarray(dB)[None], np.asarray(dW)[None]
    dB = np.asarray(dB, dtype=float).reshape(x.shape[0], -1)
    dW = np.asarray(dW, dtype=float).reshape(x.shape[0], -1)
    N = x.shape[1] - 1
    h = 1.0 / N
    xs = x[:, :-1, :]
    bp = model.drift.grad(xs)[..., 0, 0]
    sp = model.diffusion.grad(xs)[..., 0, 0, 0]
    s = model.diffusion(xs)[..., 0, 0]
    log_phi = np.zeros((x.shape[0], N + 1))
    np.cumsum(bp * h + sp * dB - 0.5 * sp**2 * h, axis=1, out=log_phi[:, 1:])
    integral = np.sum(np.exp(-log_phi[:, :-1]) * SQRT_HALF * s * sp * dW, axis=1)
    out = np.exp(log_phi[:, -1]) * integral
    return out[0] if single else out
