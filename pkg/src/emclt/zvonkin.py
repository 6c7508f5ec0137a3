"""Corrector PDE and the transformed limit equation for Sobolev drifts (d = 1).

The corrector solves, backward from ``u(1, .) = 0``,

    d_t u + 1/2 a u'' + b u' = theta u - b,        a = sigma^2,

on ``[0, 1] x [-R, R]`` with homogeneous Neumann ends and Crank--Nicolson in
time.  With ``T = 1 + u'`` the transformed fluctuation ``Z = T(t, X_t) V``
solves a linear Ito equation with no drift derivative in it:

    dZ = theta u' T^{-1} Z dt + ((T sigma)') T^{-1} Z dB + 2^{-1/2} T sigma sigma' dW.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded

from .models import ModelSpec

__all__ = [
    "PDESolveError",
    "TransformError",
    "PDESolution",
    "solve_corrector_pde",
    "GradientBoundTable",
    "check_gradient_bound",
    "LimitSolutionSobolev",
    "solve_limit_sobolev",
    "transform_roundtrip_error",
    "exit_fraction",
    "dump_field",
    "load_field",
]

SQRT_HALF = np.sqrt(0.5)


class PDESolveError(RuntimeError):
    pass


class TransformError(RuntimeError):
    """The transform ``I + grad u`` is unusable (gradient too large or near-singular)."""


@dataclass(frozen=True)
class PDESolution:
    u: np.ndarray  # (Nt + 1, Nx + 1)
    grad_u: np.ndarray
    hess_u: np.ndarray
    theta: float
    R: float
    dx: float
    dt: float
    sup_grad: float
    max_residual: float
    meta: dict = field(default_factory=dict)

    @property
    def usable(self) -> bool:
        return self.sup_grad < 1.0

    @property
    def x(self) -> np.ndarray:
        return np.linspace(-self.R, self.R, self.u.shape[1])

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.u.shape[0])

    def interpolate(self, fieldname: str, t, x) -> np.ndarray:
        """Bilinear interpolation of ``u``, ``grad_u`` or ``hess_u`` at points ``(t, x)``.

        Points outside ``[-R, R]`` take the boundary value.
        """
        F = getattr(self, fieldname)
        t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
        Nt, Nx = F.shape[0] - 1, F.shape[1] - 1
        ft = np.clip(t, 0.0, 1.0) * Nt
        fx = (np.clip(x, -self.R, self.R) + self.R) / self.dx
        it = np.minimum(np.floor(ft).astype(np.int64), Nt - 1)
        ix = np.minimum(np.floor(fx).astype(np.int64), Nx - 1)
        wt = ft - it
        wx = fx - ix
        return ((1 - wt) * ((1 - wx) * F[it, ix] + wx * F[it, ix + 1])
                + wt * ((1 - wx) * F[it + 1, ix] + wx * F[it + 1, ix + 1]))


def _operator_bands(a, b, theta, dx):
    """Tridiagonal bands of ``A u = 1/2 a u'' + b u' - theta u`` with Neumann ends."""
    diff = 0.5 * a / dx**2
    adv = b / (2 * dx)
    lower = diff - adv  # coefficient of u_{i-1}
    upper = diff + adv  # coefficient of u_{i+1}
    main = -2 * diff - theta
    # ghost node u_{-1} = u_1 (and mirrored at the right end); u' = 0 there
    upper[0] = 2 * diff[0]
    lower[-1] = 2 * diff[-1]
    lower[0] = 0.0
    upper[-1] = 0.0
    return lower, main, upper


def _apply(lower, main, upper, u):
    out = main * u
    out[1:] += lower[1:] * u[:-1]
    out[:-1] += upper[:-1] * u[1:]
    return out


def _derivatives(u, dx):
    g = np.zeros_like(u)
    g[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2 * dx)
    hs = np.empty_like(u)
    hs[..., 1:-1] = (u[..., 2:] - 2 * u[..., 1:-1] + u[..., :-2]) / dx**2
    hs[..., 0] = 2 * (u[..., 1] - u[..., 0]) / dx**2
    hs[..., -1] = 2 * (u[..., -2] - u[..., -1]) / dx**2
    return g, hs


def solve_corrector_pde(model: ModelSpec, theta: float, R: float = 12.0, Nx: int = 2400,
                        Nt: int = 400, residual_tol: float = 1e-6) -> PDESolution:
    if model.d != 1:
        raise NotImplementedError("the corrector PDE is solved in one space dimension only")
    if theta <= 0:
        raise ValueError(f"theta must be positive, got {theta}")
    x = np.linspace(-R, R, Nx + 1)
    dx = x[1] - x[0]
    dt = 1.0 / Nt
    pts = x[:, None]
    a = model.diffusion(pts)[:, 0, 0] ** 2
    b = model.drift(pts)[:, 0]
    lower, main, upper = _operator_bands(a, b, theta, dx)
    ab = np.zeros((3, Nx + 1))
    ab[0, 1:] = -0.5 * dt * upper[:-1]
    ab[1] = 1.0 - 0.5 * dt * main
    ab[2, :-1] = -0.5 * dt * lower[1:]
    u = np.zeros((Nt + 1, Nx + 1))
    worst = 0.0
    for k in range(Nt - 1, -1, -1):
        rhs = u[k + 1] + 0.5 * dt * _apply(lower, main, upper, u[k + 1]) + dt * b
        try:
            u[k] = solve_banded((1, 1), ab, rhs)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise PDESolveError(f"linear solve failed at time step {k}: {exc}") from exc
        lhs = u[k] - 0.5 * dt * _apply(lower, main, upper, u[k])
        scale = max(np.abs(rhs).max(), np.finfo(float).tiny)
        worst = max(worst, np.abs(lhs - rhs).max() / scale)
    if worst > residual_tol or not np.isfinite(u).all():
        raise PDESolveError(f"discrete residual {worst:.3e} exceeds {residual_tol:g}")
    u[-1] = 0.0
    grad_u, hess_u = _derivatives(u, dx)
    sup_grad = float(np.abs(grad_u).max())
    return PDESolution(u, grad_u, hess_u, float(theta), float(R), float(dx), float(dt), sup_grad,
                       float(worst), {"Nx": Nx, "Nt": Nt, "b_sup": float(np.abs(b).max())})


@dataclass(frozen=True)
class GradientBoundTable:
    thetas: np.ndarray
    sup_grads: np.ndarray
    slope: float

    def rows(self):
        return [{"theta": float(t), "sup_grad": float(g)} for t, g in zip(self.thetas, self.sup_grads)]


def check_gradient_bound(model: ModelSpec, thetas, **grid) -> GradientBoundTable:
    """``sup |u'|`` for each theta on a common grid, with the log-log slope against theta."""
    thetas = np.asarray(sorted(thetas), dtype=float)
    sups = np.array([solve_corrector_pde(model, th, **grid).sup_grad for th in thetas])
    if np.all(sups > 0) and len(thetas) >= 2:
        slope = float(np.polyfit(np.log(thetas), np.log(sups), 1)[0])
    else:
        slope = float("nan")
    return GradientBoundTable(thetas, sups, slope)


@dataclass(frozen=True)
class LimitSolutionSobolev:
    z: np.ndarray
    v: np.ndarray
    u_ref: PDESolution
    roundtrip_error: float = 0.0


def exit_fraction(pde: PDESolution, x: np.ndarray) -> float:
    """Fraction of paths leaving ``[-R/2, R/2]``."""
    x = np.asarray(x)
    flat = np.abs(x.reshape(x.shape[0], -1)).max(axis=1)
    return float(np.mean(flat > pde.R / 2))


def transform_roundtrip_error(T: np.ndarray) -> float:
    """max |T T^{-1} - I| over the stacked matrices (or scalars) ``T``."""
    T = np.asarray(T, dtype=float)
    if T.ndim < 2 or T.shape[-1] != T.shape[-2]:
        return float(np.abs(T * (1.0 / T) - 1.0).max())
    inv = np.linalg.inv(T)
    return float(np.abs(T @ inv - np.eye(T.shape[-1])).max())


def solve_limit_sobolev(model: ModelSpec, u: PDESolution, x, dB, dW, max_exit: float = 1e-3,
                        max_condition: float = 1e6) -> LimitSolutionSobolev:
    """Euler loop for ``Z``; returns ``Z`` and ``V = (1 + u'(t, X_t))^{-1} Z``.

    Bank shapes: ``x`` (P, N + 1, 1), ``dB`` (P, N, 1), ``dW`` (P, N, 1, 1); a
    single path without the leading axis is accepted too.
    """
    if model.d != 1:
        raise NotImplementedError("the transformed limit equation is implemented for d = 1")
    if not u.usable:
        raise TransformError(f"sup |u'| = {u.sup_grad:.3f} >= 1; increase theta")
    x = np.asarray(getattr(x, "values", x), dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
        dB = np.asarray(dB)[None]
        dW = np.asarray(dW)[None]
    P, N1, _ = x.shape
    N = N1 - 1
    dB = np.asarray(dB, dtype=float).reshape(P, N)
    dW = np.asarray(dW, dtype=float).reshape(P, N)
    frac = exit_fraction(u, x)
    if frac > max_exit:
        raise TransformError(f"{frac:.2%} of paths leave [-R/2, R/2] with R = {u.R}")
    t = np.arange(N1) / N
    xs = x[..., 0]
    ux = u.interpolate("grad_u", t[None, :], xs)
    uxx = u.interpolate("hess_u", t[None, :], xs)
    T = 1.0 + ux
    if np.min(np.abs(T)) * max_condition < np.max(np.abs(T)):
        p, j = np.unravel_index(np.argmin(np.abs(T)), T.shape)
        raise TransformError(f"near-singular transform at path {p}, node {j}, x = {xs[p, j]:.4f}")
    Tinv = 1.0 / T
    s = model.diffusion(x)[..., 0, 0]
    sp = model.diffusion.grad(x)[..., 0, 0, 0]
    h = 1.0 / N
    drift = (u.theta * ux * Tinv * h)[:, :-1]
    noise = ((uxx * s + T * sp) * Tinv)[:, :-1] * dB
    force = (SQRT_HALF * T * s * sp)[:, :-1] * dW
    Z = np.zeros((P, N1))
    z = np.zeros(P)
    for j in range(N):
        z = z + (drift[:, j] + noise[:, j]) * z + force[:, j]
        Z[:, j + 1] = z
    if not np.isfinite(Z).all():
        raise FloatingPointError("transformed limit solution became non-finite")
    V = Tinv * Z
    err = transform_roundtrip_error(T)
    Z, V = Z[..., None], V[..., None]
    if single:
        Z, V = Z[0], V[0]
    return LimitSolutionSobolev(Z, V, u, err)


def dump_field(pde: PDESolution, directory, stem: str = "corrector") -> Path:
    """Write ``u`` then ``grad_u`` as little-endian float64 (C order) plus a JSON sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    raw = directory / f"{stem}.bin"
    with open(raw, "wb") as fh:
        fh.write(np.ascontiguousarray(pde.u, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(pde.grad_u, dtype="<f8").tobytes())
    side = {
        "fields": ["u", "grad_u"],
        "shape": list(pde.u.shape),
        "dtype": "<f8",
        "order": "C",
        "axes": ["t", "x"],
        "dt": pde.dt,
        "dx": pde.dx,
        "x_min": -pde.R,
        "theta": pde.theta,
        "sup_grad": pde.sup_grad,
    }
    (directory / f"{stem}.json").write_text(json.dumps(side, indent=2, sort_keys=True))
    return raw


def load_field(directory, stem: str = "corrector"):
    directory = Path(directory)
    side = json.loads((directory / f"{stem}.json").read_text())
    data = np.fromfile(directory / f"{stem}.bin", dtype=side["dtype"])
    shape = tuple(side["shape"])
    size = int(np.prod(shape))
    return data[:size].reshape(shape), data[size:].reshape(shape), side
