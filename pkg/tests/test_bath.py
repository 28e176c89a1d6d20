import logging

import numpy as np
import pytest
from scipy.integrate import quad

from qbm.errors import InvalidInputError
from qbm.services import export
from qbm.services.bath import (
    GridScheme, default_scheme, discretize, force_batch, force_history, sample_batch,
    sample_initial, warn_recurrence,
)
from qbm.services.spectral import MemoryKernel, SpectralModel


def test_uniform_grid_is_midpoint_rule(ohmic, params):
    grid = discretize(ohmic, 10, scheme=GridScheme.UNIFORM, omega_max=20.0, params=params)
    assert grid.N == 10
    assert np.allclose(grid.omegas, np.arange(1, 20, 2))
    assert np.allclose(grid.weights, 2.0)
    assert np.allclose(grid.coupling_squares, ohmic.coupling(grid.omegas) * 2.0)
    assert grid.recurrence_time == pytest.approx(np.pi)


def test_default_scheme_follows_spectrum(ohmic, supra):
    assert default_scheme(ohmic) == GridScheme.UNIFORM
    assert default_scheme(supra) == GridScheme.EQUAL_WEIGHT


def test_equal_weight_grid(supra, params):
    grid = discretize(supra, 64, params=params)
    assert grid.scheme == GridScheme.EQUAL_WEIGHT
    assert np.all(np.diff(grid.omegas) > 0)
    assert np.allclose(grid.coupling_squares, grid.coupling_squares[0], rtol=1e-12)
    assert grid.weights.sum() == pytest.approx(supra.default_omega_max)
    total, _ = quad(lambda w: float(supra.coupling(w)), 0.0, supra.default_omega_max)
    assert grid.coupling_squares.sum() == pytest.approx(total, rel=1e-6)


def test_equal_weight_on_zero_spectrum_falls_back(params, caplog):
    with caplog.at_level(logging.WARNING):
        grid = discretize(SpectralModel.zero(), 8, scheme=GridScheme.EQUAL_WEIGHT, omega_max=8.0, params=params)
    assert np.allclose(grid.omegas, np.arange(8) + 0.5)
    assert np.all(grid.couplings == 0.0)
    assert "zero spectrum" in caplog.text


@pytest.mark.parametrize("N", [0, -3])
def test_empty_bath_is_invalid(N, ohmic):
    with pytest.raises(InvalidInputError):
        discretize(ohmic, N)


def test_default_grid_kernel_within_half_recurrence(params):
    model = SpectralModel(gamma=0.1, Lambda=50.0)
    grid = discretize(model, 256, params=params)
    t = np.linspace(0.0, 0.5 * grid.recurrence_time, 401)
    K = MemoryKernel(model, params).series(t)
    assert np.max(np.abs(grid.kernel(t) - K)) <= 1e-3 * K[0]


def test_kernel_fidelity_over_ten_periods(ohmic, params):
    t = np.linspace(0.0, 10.0 / params.Omega, 1001)
    K = MemoryKernel(ohmic, params).series(t)
    errors = {}
    for N in (64, 128, 256):
        grid = discretize(ohmic, N, params=params)
        errors[N] = float(np.max(np.abs(grid.kernel(t) - K)) / K[0])
    assert errors[256] < errors[128] < errors[64]
    assert errors[256] <= 1e-3


def test_mode_draws_do_not_depend_on_bath_size(ohmic, classical, params):
    coarse = discretize(ohmic, 16, omega_max=25.0, params=params)
    fine = discretize(ohmic, 32, omega_max=50.0, params=params)
    assert np.allclose(coarse.omegas, fine.omegas[:16])
    a = sample_initial(coarse, classical, rng_seed=7, trajectory=2)
    b = sample_initial(fine, classical, rng_seed=7, trajectory=2)
    var_a, _ = classical.mode_variances(coarse.omegas)
    var_b, _ = classical.mode_variances(fine.omegas)
    assert np.allclose(a.q / np.sqrt(var_a), b.q[:16] / np.sqrt(var_b[:16]), rtol=1e-12)


def test_sampling_is_reproducible(small_grid, classical):
    a = sample_initial(small_grid, classical, rng_seed=11, trajectory=4)
    b = sample_initial(small_grid, classical, rng_seed=11, trajectory=4)
    c = sample_initial(small_grid, classical, rng_seed=11, trajectory=5)
    assert np.array_equal(a.q, b.q) and np.array_equal(a.p, b.p)
    assert not np.array_equal(a.q, c.q)
    assert a.seed == (11, 4)

    q, p = sample_batch(small_grid, classical, rng_seed=11, count=3, offset=3)
    assert np.array_equal(q[1], a.q)
    assert np.array_equal(p[2], c.p)


def test_sample_variances_follow_beta(small_grid, quantum):
    q, p = sample_batch(small_grid, quantum, rng_seed=3, count=20000)
    var_q, var_p = quantum.mode_variances(small_grid.omegas)
    assert np.allclose(q.var(axis=0) / var_q, 1.0, atol=0.05)
    assert np.allclose(p.var(axis=0) / var_p, 1.0, atol=0.05)


def test_force_history_matches_mode_sum(small_grid, classical):
    sample = sample_initial(small_grid, classical, rng_seed=2)
    t = np.linspace(0.0, 3.0, 31)
    g, w = small_grid.couplings, small_grid.omegas
    direct = np.array([
        np.sum(g * (w * sample.q * np.cos(w * s) + sample.p * np.sin(w * s))) for s in t
    ])
    assert np.allclose(force_history(small_grid, sample, t), direct, rtol=1e-12, atol=1e-12)


def test_force_batch_rejects_mismatched_sample(small_grid):
    with pytest.raises(InvalidInputError):
        force_batch(small_grid, np.zeros(3), np.zeros(3), [0.0])


def test_force_correlation_matches_discrete_noise(small_grid, classical):
    q, p = sample_batch(small_grid, classical, rng_seed=5, count=20000)
    lags = np.array([0.0, 0.1, 0.5])
    forces = force_batch(small_grid, q, p, lags)
    products = forces * forces[:, :1]
    expected = small_grid.noise_correlation(classical, lags)
    se = products.std(axis=0) / np.sqrt(products.shape[0])
    assert np.all(np.abs(products.mean(axis=0) - expected) <= 5.0 * se)


def test_recurrence_warning(small_grid, caplog):
    with caplog.at_level(logging.WARNING):
        warn_recurrence(small_grid, 0.1 * small_grid.recurrence_time)
    assert caplog.text == ""
    with caplog.at_level(logging.WARNING):
        warn_recurrence(small_grid, small_grid.recurrence_time)
    assert "recurrence" in caplog.text


def test_grid_csv(tmp_path, small_grid):
    path = str(tmp_path / "grid.csv")
    assert small_grid.to_csv(path) == small_grid.N
    with open(path) as fh:
        assert fh.readline().strip() == "# schema: bath_grid"
    data = export.read_csv(path)
    assert np.array_equal(data["omega"], small_grid.omegas)
