import numpy as np
import pytest

from emclt.models import CallableDrift, ConstantDiffusion, ConstantDrift, LinearDrift, ModelSpec
from emclt.paths import TimeGrid, sample_brownian, sample_increments
from emclt.scheme import (SchemeError, SamplePath, area_increments, area_process, build_bundle,
                          euler_maruyama, fluctuation, reference_solution, run_frozen, scheme_path)


def bm(d=1):
    return ModelSpec(ConstantDrift(np.zeros(d)), ConstantDiffusion(np.eye(d)))


def test_pure_brownian(rng):
    p = sample_brownian(TimeGrid(8, 4), 1, (1, 0))
    x = euler_maruyama(bm(), p, 8)
    assert np.allclose(x.values[:, 0], p.values[::4, 0], atol=1e-14)
    ref = reference_solution(bm(), p)
    assert np.allclose(ref.values, p.values, atol=1e-14)


def test_constant_drift_telescopes():
    m = ModelSpec(ConstantDrift([0.7]), ConstantDiffusion([[1.0]]), x0=[0.2])
    p = sample_brownian(TimeGrid(16, 2), 1, (3, 4))
    x = euler_maruyama(m, p, 16)
    assert x.values[-1, 0] == pytest.approx(0.2 + 0.7 + p.values[-1, 0], abs=1e-13)


def test_one_step_cancellation():
    m = ModelSpec(LinearDrift([[-1.0]]), ConstantDiffusion([[1.0]]), x0=[5.0])
    p = sample_brownian(TimeGrid(1, 8), 1, (3, 4))
    x = euler_maruyama(m, p, 1)
    assert x.values[-1, 0] == pytest.approx(p.values[-1, 0], abs=1e-14)


def test_level_must_divide():
    p = sample_brownian(TimeGrid(3, 2), 1, (0, 0))
    with pytest.raises(ValueError):
        euler_maruyama(bm(), p, 4)


def test_reference_with_m1_is_the_scheme(smooth_model):
    p = sample_brownian(TimeGrid(32, 1), 1, (5, 0))
    assert np.array_equal(reference_solution(smooth_model, p).values,
                          euler_maruyama(smooth_model, p, 32).values)


def test_scheme_path_interpolates_coarse_nodes(smooth_model):
    p = sample_brownian(TimeGrid(8, 16), 1, (5, 1))
    fine = scheme_path(smooth_model, p, 8)
    coarse = euler_maruyama(smooth_model, p, 8)
    assert np.allclose(fine.values[::16], coarse.values, atol=1e-13)
    # between coarse nodes: frozen coefficients, fine Brownian increments
    b = smooth_model.drift(coarse.values[:1])[0, 0]
    s = smooth_model.diffusion(coarse.values[:1])[0, 0, 0]
    t = np.arange(17) / 128
    expect = coarse.values[0, 0] + b * t + s * p.values[:17, 0]
    assert np.allclose(fine.values[:17, 0], expect, atol=1e-13)


def test_coupling_changing_m_keeps_coarse_scheme(smooth_model):
    p = sample_brownian(TimeGrid(8, 32), 1, (6, 0))
    coarse_from_fine = euler_maruyama(smooth_model, p, 8)
    coarse_from_mid = euler_maruyama(smooth_model, p.coarsen(4), 8)
    assert np.allclose(coarse_from_fine.values, coarse_from_mid.values, atol=1e-13)


def test_non_finite_coefficients_abort():
    bad = CallableDrift(lambda x: np.where(x > 0.5, np.nan, 0.0), d=1)
    m = ModelSpec(bad, ConstantDiffusion([[1.0]]), x0=[1.0])
    p = sample_brownian(TimeGrid(4, 1), 1, (0, 0))
    with pytest.raises(SchemeError, match="path 0"):
        euler_maruyama(m, p, 4)


def test_fluctuation_scaling_and_mismatch():
    g = TimeGrid(4, 2)
    a = SamplePath(np.zeros((9, 1)), g)
    b = SamplePath(np.full((9, 1), 0.1), g)
    assert np.allclose(fluctuation(b, a, 4).values, 0.2)
    assert np.allclose(fluctuation(a, a, 4).values, 0.0)
    with pytest.raises(ValueError):
        fluctuation(a, SamplePath(np.zeros((17, 1)), TimeGrid(4, 4)), 4)


def test_bundle_invariants(smooth_model):
    p = sample_brownian(TimeGrid(16, 8), 1, (9, 9))
    bun = build_bundle(smooth_model, p, 16)
    assert np.allclose(bun.v_n.values, 4 * (bun.x_ref.values - bun.x_n.values))
    assert np.all(bun.w_n[0] == 0)
    assert bun.v_n.values[0, 0] == 0


def test_area_zero_increments():
    from emclt.paths import BrownianPath
    p = BrownianPath(np.zeros((16, 2)))
    assert np.all(area_process(p, 4) == 0)


def test_area_m1_warns():
    p = sample_brownian(TimeGrid(4, 1), 1, (0, 0))
    with pytest.warns(RuntimeWarning):
        w = area_process(p, 4)
    assert np.all(w == 0)


def test_area_diagonal_is_ito_identity_per_coarse_step():
    # exact algebra: sum_j S_j dB_j = ((sum dB)^2 - sum dB^2) / 2 within one coarse step
    n, M = 4, 32
    dB = sample_increments(n * M, 2, 11, [0])[0]
    inc = area_increments(dB, n)
    for k in range(n):
        blk = dB[k * M:(k + 1) * M]
        total = inc[k * M:(k + 1) * M].sum(axis=0)
        expect = np.sqrt(2 * n) * (blk.sum(0) ** 2 - (blk**2).sum(0)) / 2
        assert np.allclose(np.diag(total), expect, atol=1e-13)


def test_area_matches_brute_force_double_loop():
    n, M, d = 2, 4, 2
    dB = sample_increments(n * M, d, 4, [0])[0]
    B = np.vstack([np.zeros(d), np.cumsum(dB, axis=0)])
    W = np.zeros((d, d))
    for j in range(n * M):
        kap = (j // M) * M
        for k in range(d):
            for i in range(d):
                W[k, i] += np.sqrt(2 * n) * (B[j, k] - B[kap, k]) * dB[j, i]
    from emclt.paths import BrownianPath
    assert np.allclose(area_process(BrownianPath(dB), n)[-1], W, atol=1e-14)


def test_area_closed_form_convergence_in_m():
    # L2 discrepancy to sqrt(2n)((dB)^2 - 1/n)/2 scales like M^{-1/2}: exact value 1/sqrt(nM)
    n = 4
    errs = []
    for M in (16, 64):
        dB = sample_increments(n * M, 1, 2, range(400))
        inc = area_increments(dB, n)[..., 0, 0].reshape(400, n, M).sum(axis=2)
        coarse = dB[..., 0].reshape(400, n, M).sum(axis=2)
        closed = np.sqrt(2 * n) * (coarse**2 - 1 / n) / 2
        errs.append(np.sqrt(np.mean((inc - closed) ** 2)))
    assert errs[0] == pytest.approx(1 / np.sqrt(n * 16), rel=0.1)
    assert errs[1] == pytest.approx(1 / np.sqrt(n * 64), rel=0.1)


def test_sup_vn_stays_bounded_as_n_doubles(smooth_model):
    # strong error fits ~ n^{-1/2}, so sqrt(n) sup|X - X^n| has no trend
    sups = []
    for n in (16, 64, 256):
        dB = sample_increments(n * 16, 1, 5, range(300))
        ref = run_frozen(smooth_model, dB, 1)
        xn = run_frozen(smooth_model, dB, 16)
        sups.append(np.sqrt(np.mean((np.sqrt(n) * np.abs(ref - xn).max(axis=(1, 2))) ** 2)))
    assert max(sups) / min(sups) < 1.5


def test_reference_self_convergence(smooth_model):
    # ||ref(M=128) - ref(M=64)||_sup drops by about sqrt(2) when both are refined together
    n = 4
    out = []
    for M in (32, 64, 128):
        dB = sample_increments(n * 2 * M, 1, 8, range(1000))
        fine = run_frozen(smooth_model, dB, 1)
        half = run_frozen(smooth_model, dB.reshape(1000, n * M, 2, 1).sum(axis=2), 1)
        out.append(np.sqrt(np.mean(np.abs(fine[:, ::2] - half).max(axis=(1, 2)) ** 2)))
    ratios = np.array(out[:-1]) / np.array(out[1:])
    assert np.all((ratios > 1.2) & (ratios < 1.7))
