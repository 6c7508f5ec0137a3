import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emclt.paths import (BrownianPath, TimeGrid, coarsen, derive_seed, sample_brownian,
                         sample_increments)


def test_grid_basics():
    g = TimeGrid(4, 8)
    assert g.n_fine == 32
    assert g.h_fine == 1 / 32
    t = g.fine_times()
    assert t[0] == 0.0 and t[-1] == 1.0
    k = g.kappa(t)
    assert np.allclose(k * 4, np.round(k * 4))  # lands on a coarse node
    assert np.all(k <= t)
    assert np.array_equal(g.kappa_index() // 8 * 8, g.kappa_index())


@pytest.mark.parametrize("n,M", [(0, 4), (3, 0), (-1, 1)])
def test_grid_rejects_nonpositive(n, M):
    with pytest.raises(ValueError):
        TimeGrid(n, M)


def test_grid_rejects_index_overflow():
    with pytest.raises(OverflowError):
        TimeGrid(2**20, 2**12)


def test_sampling_is_deterministic():
    g = TimeGrid(2, 2)
    a = sample_brownian(g, 1, (7, 0))
    b = sample_brownian(g, 1, (7, 0))
    assert a.increments.shape == (4, 1)
    assert np.array_equal(a.increments, b.increments)
    c = sample_brownian(g, 1, (7, 1))
    assert not np.array_equal(a.increments, c.increments)


def test_single_increment_shape():
    p = sample_brownian(TimeGrid(1, 1), 3, (1, 0))
    assert p.increments.shape == (1, 3)


def test_rejects_zero_dimension():
    with pytest.raises(ValueError):
        sample_brownian(TimeGrid(2, 2), 0, (1, 0))


def test_bank_rows_match_single_paths():
    bank = sample_increments(16, 2, 99, [3, 0, 5])
    for row, idx in zip(bank, [3, 0, 5]):
        single = sample_brownian(TimeGrid(4, 4), 2, (99, idx))
        assert np.array_equal(row, single.increments)


def test_order_of_generation_is_irrelevant():
    a = sample_increments(8, 1, 5, [0, 1, 2, 3])
    b = sample_increments(8, 1, 5, [3, 2, 1, 0])
    assert np.array_equal(a, b[::-1])


def test_values_start_at_zero():
    p = sample_brownian(TimeGrid(3, 2), 2, (1, 1))
    v = p.values
    assert np.array_equal(v[0], [0.0, 0.0])
    assert np.allclose(v[-1], p.increments.sum(axis=0))


def test_coarsen_examples():
    p = BrownianPath(np.array([[1.0], [2.0], [3.0], [4.0]]))
    assert np.array_equal(coarsen(p, 1).increments, p.increments)
    assert np.array_equal(coarsen(p, 2).increments, [[3.0], [7.0]])
    with pytest.raises(ValueError):
        coarsen(p, 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 3))
def test_coarsen_composes_and_keeps_terminal_value(seed, d):
    p = sample_brownian(TimeGrid(4, 4), d, (seed, 0))
    twice = coarsen(coarsen(p, 2), 2)
    once = coarsen(p, 4)
    assert np.allclose(twice.increments, once.increments, rtol=0, atol=1e-14)
    assert np.allclose(once.values[-1], p.values[-1], rtol=0, atol=1e-14)
    # surviving nodes keep their values
    assert np.allclose(coarsen(p, 2).values, p.values[::2], rtol=0, atol=1e-14)


def test_derived_seeds_differ_and_are_stable():
    a = derive_seed(1, "x")
    assert a == derive_seed(1, "x")
    assert a != derive_seed(1, "y")
    assert a != derive_seed(2, "x")
    with pytest.raises(ValueError):
        derive_seed(-1, "x")


def test_terminal_variance():
    # Var(B_1) over 1e5 paths; a single increment per path suffices
    b1 = sample_increments(1, 1, 2024, np.arange(100_000))[:, 0, 0]
    assert abs(b1.var() - 1.0) < 0.02


def test_increment_moments():
    n_steps, paths = 8, 12_500  # 1e5 increments
    inc = sample_increments(n_steps, 1, 77, np.arange(paths)).ravel()
    h = 1.0 / n_steps
    N = inc.size
    se_mean = np.sqrt(h / N)
    assert abs(inc.mean()) < 4 * se_mean
    se_var = np.sqrt(2 * h**2 / N)
    assert abs(inc.var() - h) < 4 * se_var
    # fourth moment 3 h^2, variance of x^4 is (105 - 9) h^4
    se4 = np.sqrt(96 * h**4 / N)
    assert abs(np.mean(inc**4) - 3 * h**2) < 5 * se4
