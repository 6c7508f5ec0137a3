"""Drift and diffusion coefficients, model specification and named presets.

Array conventions (leading axes are batch axes):

* drift ``b(x)``: ``(..., d) -> (..., d)``; ``b.grad(x)[..., l, j] = d_j b^l``
* diffusion ``sigma(x)``: ``(..., d) -> (..., d, d)``;
  ``sigma.grad(x)[..., l, i, j] = d_j sigma^{l, i}`` and
  ``sigma.hess(x)[..., l, i, j, k] = d_j d_k sigma^{l, i}``

Coefficients acting coordinate-wise (drift component ``l`` depends on ``x_l``
only, diagonal diffusion) expose a ``kernel_spec`` so the compiled Euler
kernels can evaluate them without calling back into Python.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Drift",
    "ConstantDrift",
    "LinearDrift",
    "TanhDrift",
    "LacunaryHolderDrift",
    "BumpDrift",
    "CallableDrift",
    "SumDrift",
    "Diffusion",
    "ConstantDiffusion",
    "SinDiffusion",
    "CallableDiffusion",
    "ModelSpec",
    "ModelError",
    "PRESETS",
    "make_drift",
    "make_diffusion",
    "list_presets",
    "build_model",
]

# scalar-function codes shared with emclt._kernels
K_CONST, K_LINEAR, K_TANH, K_LACUNARY, K_BUMP = 0, 1, 2, 3, 4
S_CONST, S_SIN = 0, 1


class ModelError(ValueError):
    pass


class Drift:
    """Base class; subclasses implement ``__call__`` and usually ``grad``."""

    d: int
    name = "drift"
    regularity = "unspecified"

    def __call__(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError(f"{self.name} has no pointwise gradient; mollify it first")

    def kernel_spec(self):
        return None

    def __add__(self, other):
        return SumDrift((self, other))


@dataclass(frozen=True)
class SumDrift(Drift):
    parts: tuple

    def __post_init__(self):
        dims = {p.d for p in self.parts}
        if len(dims) != 1:
            raise ModelError(f"cannot add drifts of dimensions {sorted(dims)}")

    @property
    def d(self):
        return self.parts[0].d

    @property
    def name(self):
        return " + ".join(p.name for p in self.parts)

    def __call__(self, x):
        return sum(p(x) for p in self.parts)

    def grad(self, x):
        return sum(p.grad(x) for p in self.parts)


@dataclass(frozen=True)
class ConstantDrift(Drift):
    value: np.ndarray

    name = "constant"
    regularity = "C^inf"

    def __post_init__(self):
        object.__setattr__(self, "value", np.atleast_1d(np.asarray(self.value, dtype=float)))

    @property
    def d(self):
        return self.value.shape[0]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.value, x.shape).copy()

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (self.d,))

    def kernel_spec(self):
        return np.full(self.d, K_CONST), self.value[:, None].copy()


@dataclass(frozen=True)
class LinearDrift(Drift):
    """``b(x) = A x + c``."""

    A: np.ndarray
    c: np.ndarray = None

    name = "linear"
    regularity = "C^inf (unbounded)"

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ModelError(f"A must be square, got {A.shape}")
        c = np.zeros(A.shape[0]) if self.c is None else np.atleast_1d(np.asarray(self.c, float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", c)

    @property
    def d(self):
        return self.A.shape[0]

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ self.A.T + self.c

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.A, x.shape[:-1] + self.A.shape).copy()

    def kernel_spec(self):
        if np.count_nonzero(self.A - np.diag(np.diag(self.A))):
            return None
        return np.full(self.d, K_LINEAR), np.stack([np.diag(self.A), self.c], axis=1)


@dataclass(frozen=True)
class TanhDrift(Drift):
    """``b^l(x) = shift - scale * tanh(rate * x_l)``: bounded and C^inf."""

    d: int = 1
    shift: float = 0.5
    scale: float = 1.5
    rate: float = 1.0

    name = "smooth-tanh"
    regularity = "C^inf"

    def __call__(self, x):
        return self.shift - self.scale * np.tanh(self.rate * np.asarray(x, dtype=float))

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        diag = -self.scale * self.rate / np.cosh(self.rate * x) ** 2
        return diag[..., :, None] * np.eye(self.d)

    def kernel_spec(self):
        row = [self.shift, self.scale, self.rate]
        return np.full(self.d, K_TANH), np.tile(row, (self.d, 1))


def default_phases(d: int, K: int) -> np.ndarray:
    """Fixed deterministic phases (golden-ratio low-discrepancy sequence)."""
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    k = np.arange(K + 1)[None, :]
    l = np.arange(d)[:, None]
    return 2.0 * np.pi * np.mod((k + 1) * golden + l * math.sqrt(2.0), 1.0)


@dataclass(frozen=True)
class LacunaryHolderDrift(Drift):
    """``b^l(x) = sum_k a_k cos(2^k x_l + phi_{l,k})`` with ``a_k = 2^{-alpha k} (1+k)^{-2}``.

    The extra ``(1+k)^{-2}`` decay places ``b`` in C^{alpha+}, not just C^alpha.
    ``damping`` holds the Gaussian mollification factors (all ones when unmollified).
    """

    d: int = 1
    alpha: float = 0.5
    K: int = 14
    coeffs: np.ndarray = None
    phases: np.ndarray = None
    damping: np.ndarray = None
    delta: float = 0.0

    regularity = "C^{alpha+}"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ModelError(f"alpha must lie in (0, 1), got {self.alpha}")
        k = np.arange(self.K + 1)
        if self.coeffs is None:
            object.__setattr__(self, "coeffs", 2.0 ** (-self.alpha * k) / (1.0 + k) ** 2)
        if self.phases is None:
            object.__setattr__(self, "phases", default_phases(self.d, self.K))
        if self.damping is None:
            object.__setattr__(self, "damping", np.ones(self.K + 1))
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))
        object.__setattr__(self, "phases", np.broadcast_to(np.asarray(self.phases, float), (self.d, self.K + 1)).copy())

    @property
    def name(self):
        return f"holder-lacunary(alpha={self.alpha:g})"

    @property
    def freqs(self):
        return 2.0 ** np.arange(self.K + 1)

    @property
    def effective(self):
        return self.coeffs * self.damping

    def _active(self):
        a = self.effective
        return np.flatnonzero(np.abs(a) > 1e-18 * np.abs(self.coeffs).max())

    def __call__(self, x):
        from . import _kernels

        x = np.asarray(x, dtype=float)
        codes, params = self.kernel_spec()
        out = np.empty_like(x)
        for l in range(self.d):
            col = np.ascontiguousarray(x[..., l]).ravel()
            out[..., l] = _kernels.drift_values(codes[l], params[l], col).reshape(x.shape[:-1])
        return out

    def direct(self, x):
        """Term-by-term cosine evaluation (reference for the compiled path)."""
        x = np.asarray(x, dtype=float)
        a = self.effective
        out = np.zeros_like(x)
        for k in self._active():
            out += a[k] * np.cos(self.freqs[k] * x + self.phases[:, k])
        return out

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        a = self.effective
        diag = np.zeros_like(x)
        for k in self._active():
            diag -= a[k] * self.freqs[k] * np.sin(self.freqs[k] * x + self.phases[:, k])
        return diag[..., :, None] * np.eye(self.d)

    def mollified(self, delta: float) -> "LacunaryHolderDrift":
        """Exact Gaussian mollification: frequency ``2^k`` is damped by ``exp(-(2^k delta)^2 / 2)``.

        For ``delta`` so small that every factor rounds to one, the undamped
        series is returned unchanged.
        """
        if delta < 0:
            raise ValueError(f"delta must be non-negative, got {delta}")
        damp = np.exp(-0.5 * (self.freqs * delta) ** 2)
        return LacunaryHolderDrift(self.d, self.alpha, self.K, self.coeffs, self.phases, damp * self.damping, delta)

    def holder_certificate(self) -> float:
        """max_k |a_k| 2^{alpha k}; the C^{alpha+} tail condition needs ``rho_k = |a_k| 2^{alpha k} -> 0``."""
        k = np.arange(self.K + 1)
        return float(np.max(np.abs(self.effective) * 2.0 ** (self.alpha * k)))

    def kernel_spec(self):
        K1 = self.K + 1
        params = np.empty((self.d, 1 + 3 * K1))
        params[:, 0] = K1
        params[:, 1 : 1 + K1] = self.effective
        params[:, 1 + K1 : 1 + 2 * K1] = np.cos(self.phases)
        params[:, 1 + 2 * K1 :] = np.sin(self.phases)
        return np.full(self.d, K_LACUNARY), params


@dataclass(frozen=True)
class BumpDrift(Drift):
    """``b^l(x) = A (1 - ((x_l - c)/r)^2)_+^gamma``: bounded, compactly supported.

    The cusp of order ``gamma`` at ``c +- r`` puts it in W^alpha_m for
    ``alpha < gamma + 1/m``; ``alpha`` and ``m`` are carried as metadata.
    """

    d: int = 1
    amplitude: float = 1.0
    radius: float = 1.5
    gamma: float = 0.6
    center: float = 0.0
    alpha: float = 0.5
    m: int = 2

    regularity = "W^alpha_m, compact support"

    def __post_init__(self):
        if self.alpha >= self.gamma + 1.0 / self.m:
            raise ModelError(
                f"bump with gamma={self.gamma} is not in W^{self.alpha}_{self.m}"
            )

    @property
    def name(self):
        return f"sobolev-bump(alpha={self.alpha:g}, m={self.m})"

    def __call__(self, x):
        s = (np.asarray(x, dtype=float) - self.center) / self.radius
        return self.amplitude * np.clip(1.0 - s * s, 0.0, None) ** self.gamma

    def grad(self, x):
        # a.e. derivative; unbounded next to the support edge
        s = (np.asarray(x, dtype=float) - self.center) / self.radius
        inside = np.abs(s) < 1.0
        q = np.where(inside, 1.0 - s * s, 1.0)
        diag = np.where(inside, self.amplitude * self.gamma * q ** (self.gamma - 1.0) * (-2.0 * s / self.radius), 0.0)
        return diag[..., :, None] * np.eye(self.d)

    def support(self):
        return self.center - self.radius, self.center + self.radius

    def kernel_spec(self):
        row = [self.amplitude, self.radius, self.gamma, self.center]
        return np.full(self.d, K_BUMP), np.tile(row, (self.d, 1))


@dataclass(frozen=True)
class CallableDrift(Drift):
    """Wraps user callables; ``grad`` may be omitted for non-differentiable drifts."""

    func: object
    d: int
    grad_func: object = None
    name: str = "callable"
    regularity: str = "unspecified"

    def __call__(self, x):
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def grad(self, x):
        if self.grad_func is None:
            return super().grad(x)
        return np.asarray(self.grad_func(np.asarray(x, dtype=float)), dtype=float)


class Diffusion:
    d: int
    name = "diffusion"

    def __call__(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hess(self, x):
        raise NotImplementedError

    def kernel_spec(self):
        return None


@dataclass(frozen=True)
class ConstantDiffusion(Diffusion):
    matrix: np.ndarray

    name = "constant"

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if S.shape[0] != S.shape[1]:
            raise ModelError(f"diffusion matrix must be square, got {S.shape}")
        object.__setattr__(self, "matrix", S)

    @property
    def d(self):
        return self.matrix.shape[0]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.matrix, x.shape[:-1] + self.matrix.shape).copy()

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.d,) * 3)

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.d,) * 4)

    def kernel_spec(self):
        S = self.matrix
        if np.count_nonzero(S - np.diag(np.diag(S))):
            return None
        return np.full(self.d, S_CONST), np.diag(S)[:, None].copy()


@dataclass(frozen=True)
class SinDiffusion(Diffusion):
    """Diagonal ``sigma^{l,l}(x) = c0 + c1 sin(rate x_l)``; elliptic with ``lambda = c0 - |c1|``."""

    d: int = 1
    c0: float = 1.0
    c1: float = 0.5
    rate: float = 1.0

    def __post_init__(self):
        if self.c0 - abs(self.c1) <= 0:
            raise ModelError("sin-modulated diffusion must satisfy c0 > |c1|")

    @property
    def name(self):
        return f"sin-modulated(c0={self.c0:g}, c1={self.c1:g})"

    @property
    def ellipticity(self):
        return self.c0 - abs(self.c1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return (self.c0 + self.c1 * np.sin(self.rate * x))[..., :, None] * np.eye(self.d)

    def _diag_tensor(self, values, order):
        d = self.d
        out = np.zeros(values.shape[:-1] + (d,) * (2 + order))
        for l in range(d):
            out[(..., l, l) + (l,) * order] = values[..., l]
        return out

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return self._diag_tensor(self.c1 * self.rate * np.cos(self.rate * x), 1)

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        return self._diag_tensor(-self.c1 * self.rate**2 * np.sin(self.rate * x), 2)

    def kernel_spec(self):
        return np.full(self.d, S_SIN), np.tile([self.c0, self.c1, self.rate], (self.d, 1))


@dataclass(frozen=True)
class CallableDiffusion(Diffusion):
    func: object
    grad_func: object
    d: int
    hess_func: object = None
    name: str = "callable"

    def __call__(self, x):
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def grad(self, x):
        return np.asarray(self.grad_func(np.asarray(x, dtype=float)), dtype=float)

    def hess(self, x):
        if self.hess_func is None:
            raise NotImplementedError("second derivative not supplied")
        return np.asarray(self.hess_func(np.asarray(x, dtype=float)), dtype=float)


@dataclass(frozen=True)
class ModelSpec:
    drift: Drift
    diffusion: Diffusion
    x0: np.ndarray = None
    lam: float = None
    d: int = field(default=None)

    def __post_init__(self):
        d = self.drift.d if self.d is None else self.d
        if self.drift.d != d or self.diffusion.d != d:
            raise ModelError(f"dimension mismatch: drift {self.drift.d}, diffusion {self.diffusion.d}, d={d}")
        x0 = np.zeros(d) if self.x0 is None else np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.shape != (d,):
            raise ModelError(f"x0 must have shape ({d},), got {x0.shape}")
        lam = self.lam
        if lam is None:
            lam = getattr(self.diffusion, "ellipticity", None)
            if lam is None and isinstance(self.diffusion, ConstantDiffusion):
                lam = float(np.sqrt(np.linalg.eigvalsh(self.diffusion.matrix @ self.diffusion.matrix.T).min()))
        if lam is None or lam <= 0:
            raise ModelError("an ellipticity constant lam > 0 is required")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "lam", float(lam))

    def kernel_spec(self):
        """Arrays for the compiled kernels, or None when the model is not coordinate-wise."""
        ds, ss = self.drift.kernel_spec(), self.diffusion.kernel_spec()
        if ds is None or ss is None:
            return None
        return (
            np.ascontiguousarray(ds[0], dtype=np.int64),
            np.ascontiguousarray(ds[1], dtype=float),
            np.ascontiguousarray(ss[0], dtype=np.int64),
            np.ascontiguousarray(ss[1], dtype=float),
        )

    def check_ellipticity(self, lattice=None, n_directions=16):
        """Spot-check ``y* (sigma sigma*)(x) y >= lam^2 |y|^2`` and finiteness of sigma and its derivatives."""
        if lattice is None:
            axis = np.linspace(-8.0, 8.0, 161)
            grids = np.meshgrid(*([axis] * min(self.d, 2)), indexing="ij")
            pts = np.stack([g.ravel() for g in grids], axis=-1)
            lattice = np.zeros((pts.shape[0], self.d))
            lattice[:, : pts.shape[1]] = pts
        S = self.diffusion(lattice)
        a = S @ np.swapaxes(S, -1, -2)
        rng = np.random.default_rng(0)
        ys = rng.standard_normal((n_directions, self.d))
        ys /= np.linalg.norm(ys, axis=1, keepdims=True)
        quad = np.einsum("ki,pij,kj->pk", ys, a, ys)
        derivs = [self.diffusion.grad(lattice)]
        try:
            derivs.append(self.diffusion.hess(lattice))
        except NotImplementedError:
            pass
        finite = all(np.isfinite(t).all() for t in [S] + derivs)
        return bool(finite and quad.min() >= self.lam**2 * (1 - 1e-12))


# ---------------------------------------------------------------- presets

@dataclass(frozen=True)
class Preset:
    name: str
    kind: str
    tag: str
    factory: object
    note: str = ""


def _drift_presets():
    return [
        Preset("smooth-tanh", "drift", "C^inf", lambda d, **kw: TanhDrift(d=d, **kw),
               "b(x) = 0.5 - 1.5 tanh(x), bounded"),
        Preset("holder-lacunary(alpha=0.5)", "drift", "C^{alpha+}",
               lambda d, alpha=0.5, K=14: LacunaryHolderDrift(d=d, alpha=alpha, K=K),
               "sum_k 2^{-alpha k}(1+k)^{-2} cos(2^k x + phi_k), K=14"),
        Preset("sobolev-bump(alpha=0.5, m=2)", "drift", "W^alpha_m",
               lambda d, alpha=0.5, m=2, **kw: BumpDrift(d=d, alpha=alpha, m=m, **kw),
               "A (1 - (x/r)^2)_+^gamma, compact support [-r, r]"),
        Preset("zero", "drift", "C^inf", lambda d: ConstantDrift(np.zeros(d)), "b = 0"),
        Preset("constant", "drift", "C^inf", lambda d, c=1.0: ConstantDrift(np.full(d, c)), "b = c"),
        Preset("linear", "drift", "C^inf (unbounded)", lambda d, a=-1.0: LinearDrift(a * np.eye(d)), "b(x) = a x"),
    ]


def _diffusion_presets():
    return [
        Preset("identity", "diffusion", "C^inf", lambda d: ConstantDiffusion(np.eye(d)), "sigma = I, lambda = 1"),
        Preset("sin-modulated", "diffusion", "C^inf",
               lambda d, c0=1.0, c1=0.5, rate=1.0: SinDiffusion(d=d, c0=c0, c1=c1, rate=rate),
               "sigma = diag(1 + 0.5 sin x), lambda = 0.5"),
        Preset("scalar", "diffusion", "C^inf", lambda d, s=1.0: ConstantDiffusion(s * np.eye(d)), "sigma = s I"),
    ]


PRESETS = {p.name.split("(")[0]: p for p in _drift_presets() + _diffusion_presets()}


def make_drift(name: str, d: int = 1, **params) -> Drift:
    key = name.split("(")[0]
    p = PRESETS.get(key)
    if p is None or p.kind != "drift":
        raise ModelError(f"unknown drift preset {name!r}")
    return p.factory(d, **params)


def make_diffusion(name: str, d: int = 1, **params) -> Diffusion:
    key = name.split("(")[0]
    p = PRESETS.get(key)
    if p is None or p.kind != "diffusion":
        raise ModelError(f"unknown diffusion preset {name!r}")
    return p.factory(d, **params)


def build_model(drift="smooth-tanh", diffusion="sin-modulated", d=1, x0=None, lam=None,
                drift_params=None, diffusion_params=None) -> ModelSpec:
    b = make_drift(drift, d, **(drift_params or {}))
    s = make_diffusion(diffusion, d, **(diffusion_params or {}))
    return ModelSpec(b, s, x0=x0, lam=lam)


def list_presets() -> str:
    lines = []
    for p in PRESETS.values():
        lines.append(f"{p.kind:<9}  {p.name:<30}  [{p.tag}]  {p.note}")
    return "\n".join(lines)
