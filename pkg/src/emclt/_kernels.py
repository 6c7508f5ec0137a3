"""Compiled Euler loops for coordinate-wise models.

A model is coordinate-wise when ``b^l`` depends on ``x_l`` only and ``sigma``
is diagonal; each coordinate then evolves on its own Brownian component.
Scalar functions are encoded as ``(code, params)``; see ``emclt.models``.
"""
import numpy as np
from numba import njit

K_CONST, K_LINEAR, K_TANH, K_LACUNARY, K_BUMP = 0, 1, 2, 3, 4
S_CONST, S_SIN = 0, 1


@njit(cache=True, nogil=True)
def _drift(code, p, x):
    if code == K_CONST:
        return p[0]
    if code == K_LINEAR:
        return p[0] * x + p[1]
    if code == K_TANH:
        return p[0] - p[1] * np.tanh(p[2] * x)
    if code == K_LACUNARY:
        # cos(2^k x + phi_k) = Re(e^{i phi_k} z^(2^k)), z = e^{ix}, by repeated squaring
        K1 = int(p[0])
        zr = np.cos(x)
        zi = np.sin(x)
        acc = 0.0
        for k in range(K1):
            a = p[1 + k]
            if a != 0.0:
                acc += a * (p[1 + K1 + k] * zr - p[1 + 2 * K1 + k] * zi)
            zr, zi = zr * zr - zi * zi, 2.0 * zr * zi
        return acc
    if code == K_BUMP:
        s = (x - p[3]) / p[1]
        q = 1.0 - s * s
        if q <= 0.0:
            return 0.0
        return p[0] * q ** p[2]
    return np.nan


@njit(cache=True, nogil=True)
def _diff(code, p, x):
    if code == S_CONST:
        return p[0]
    if code == S_SIN:
        return p[0] + p[1] * np.sin(p[2] * x)
    return np.nan


@njit(cache=True, nogil=True)
def em_fine(x0, dB, M, dcode, dpar, scode, spar):
    """Euler scheme with coefficients frozen on blocks of ``M`` fine steps.

    ``x0``: (P, d); ``dB``: (P, N, d) with N divisible by M.  Returns the
    fine-node values (P, N + 1, d) plus ``(path, step)`` of the first
    non-finite coefficient evaluation, or ``(-1, -1)``.
    """
    P, N, d = dB.shape
    h = 1.0 / N
    n = N // M
    X = np.empty((P, N + 1, d))
    bad_path = -1
    bad_step = -1
    for p in range(P):
        for l in range(d):
            xk = x0[p, l]
            X[p, 0, l] = xk
            for k in range(n):
                b = _drift(dcode[l], dpar[l], xk)
                s = _diff(scode[l], spar[l], xk)
                if not (np.isfinite(b) and np.isfinite(s)):
                    if bad_path < 0:
                        bad_path = p
                        bad_step = k
                    for j in range(k * M + 1, N + 1):
                        X[p, j, l] = np.nan
                    break
                base = k * M
                acc = 0.0
                for j in range(M):
                    acc += dB[p, base + j, l]
                    X[p, base + j + 1, l] = xk + b * ((j + 1) * h) + s * acc
                xk = X[p, base + M, l]
    return X, bad_path, bad_step


@njit(cache=True, nogil=True)
def sup_abs_diff(a, b):
    """max over axis 1 and 2 of |a - b|, per path."""
    P = a.shape[0]
    out = np.zeros(P)
    for p in range(P):
        m = 0.0
        for j in range(a.shape[1]):
            for l in range(a.shape[2]):
                v = abs(a[p, j, l] - b[p, j, l])
                if v > m:
                    m = v
        out[p] = m
    return out


@njit(cache=True, nogil=True)
def drift_values(code, params, x):
    """Scalar function ``(code, params)`` applied to every entry of the 1-d array ``x``."""
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        out[i] = _drift(code, params, x[i])
    return out
