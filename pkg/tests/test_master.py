import dataclasses

import numpy as np
import pytest

from qbm.errors import CoverageError, InvalidInputError
from qbm.services import export
from qbm.services.bath import GridScheme, discretize
from qbm.services.gaussian import moment_trajectory, squeezed_state, thermal_state, vacuum_state
from qbm.services.master import (
    COEFFICIENTS, coefficients_from_moments, extract_coefficients, forward_check, locality_report,
    verify_locality,
)
from qbm.services.propagator import build_system
from qbm.services.spectral import (
    BetaKind, BetaSchedule, PhysicalParams, SpectralModel, SpectrumKind, matched_reference,
)

CLOSURE_TIMES = np.concatenate([np.linspace(0.0, 2.0, 401), np.linspace(2.0, 100.0, 2000)[1:]])


def test_uncoupled_coefficients_are_bare(params, classical):
    grid = discretize(SpectralModel.zero(), 8, omega_max=8.0, params=params)
    coeffs = extract_coefficients(grid, params, classical, times=np.linspace(0.0, 5.0, 51))
    assert not coeffs.flags.any()
    assert np.allclose(coeffs.OmegaBar2, params.Omega ** 2, atol=1e-10)
    assert np.allclose(coeffs.gammaBar, 0.0, atol=1e-10)
    assert np.allclose(coeffs.d, 0.0, atol=1e-10)
    assert np.allclose(coeffs.D, 0.0, atol=1e-10)


@pytest.mark.slow
@pytest.mark.parametrize("kind, beta_kind", [
    (SpectrumKind.OHMIC, BetaKind.CLASSICAL),
    (SpectrumKind.OHMIC, BetaKind.QUANTUM),
    (SpectrumKind.SUPRA_OHMIC, BetaKind.CLASSICAL),
    (SpectrumKind.SUPRA_OHMIC, BetaKind.QUANTUM),
])
def test_extracted_equation_closes_forward(kind, beta_kind):
    params = PhysicalParams(T=0.5)
    exponent = 3.0 if kind == SpectrumKind.SUPRA_OHMIC else 1.0
    model = SpectralModel(kind=kind, gamma=0.1, Lambda=5.0, exponent=exponent)
    grid = discretize(model, 800, scheme=GridScheme.UNIFORM, omega_max=25.0, params=params)
    beta = BetaSchedule(kind=beta_kind, params=params)

    coeffs = extract_coefficients(grid, params, beta, times=CLOSURE_TIMES)
    check = forward_check(coeffs, squeezed_state(params, 0.3, mean=(1.0, 0.5)))
    assert not coeffs.flags.any()
    assert check.deviation <= 1e-5
    assert set(check.deviations) == {"Q", "P", "QQ", "QP", "PP"}


@pytest.mark.slow
def test_high_temperature_short_memory_is_markovian():
    params = PhysicalParams(T=10.0)
    model = SpectralModel(gamma=0.1, Lambda=200.0)
    grid = discretize(model, 2048, params=params)
    beta = BetaSchedule(kind=BetaKind.CLASSICAL, params=params)
    coeffs = extract_coefficients(grid, params, beta, times=np.linspace(0.0, 3.0, 601))
    late = coeffs.late_time(2.0)
    assert late["gammaBar"] == pytest.approx(model.gamma, rel=0.02)
    assert late["D"] == pytest.approx(2.0 * params.m * model.gamma * params.kT, rel=0.02)


@pytest.mark.slow
def test_markovian_limit_is_approached_monotonically():
    params = PhysicalParams(T=10.0)
    beta = BetaSchedule(kind=BetaKind.CLASSICAL, params=params)
    gaps = []
    for Lambda in (50.0, 100.0, 200.0):
        model = SpectralModel(gamma=0.1, Lambda=Lambda)
        grid = discretize(model, 2048, params=params)
        late = extract_coefficients(grid, params, beta, times=np.linspace(0.0, 3.0, 601)).late_time(2.0)
        gaps.append((
            abs(late["OmegaBar2"] - params.Omega ** 2),
            abs(late["gammaBar"] - model.gamma),
            abs(late["D"] - 2.0 * params.m * model.gamma * params.kT),
        ))
    for coarse, fine in zip(gaps, gaps[1:]):
        assert all(f < c for c, f in zip(coarse, fine))


@pytest.mark.slow
def test_supra_ohmic_bath_diffuses_less_than_matched_ohmic():
    params = PhysicalParams(T=10.0)
    beta = BetaSchedule(kind=BetaKind.CLASSICAL, params=params)
    ohmic = SpectralModel(gamma=0.1, Lambda=10.0)
    supra = matched_reference(
        SpectralModel(kind=SpectrumKind.SUPRA_OHMIC, gamma=0.1, Lambda=10.0, exponent=3.0), params.Omega,
    )
    times = np.linspace(0.0, 15.0, 751)
    D = {}
    for name, model in (("ohmic", ohmic), ("supra", supra)):
        grid = discretize(model, 1024, params=params)
        D[name] = extract_coefficients(grid, params, beta, times=times).late_time(10.0)["D"]
    assert 0.0 < D["supra"] < D["ohmic"]
    assert D["ohmic"] == pytest.approx(1.86, rel=0.1)
    assert D["supra"] == pytest.approx(0.368, rel=0.1)


def test_low_temperature_quantum_diffusion_departs_from_classical():
    params = PhysicalParams(T=0.5)
    model = SpectralModel(gamma=0.1, Lambda=20.0)
    grid = discretize(model, 1024, omega_max=200.0, params=params)
    beta = BetaSchedule(kind=BetaKind.QUANTUM, params=params)
    coeffs = extract_coefficients(grid, params, beta, times=np.linspace(0.0, 15.0, 751))
    D_late = coeffs.late_time(10.0)["D"]
    classical_D = 2.0 * params.m * model.gamma * params.kT
    assert abs(D_late - classical_D) > 0.1 * classical_D


def test_coefficients_do_not_depend_on_initial_state(params, quantum):
    model = SpectralModel(kind=SpectrumKind.SUPRA_OHMIC, gamma=0.1, Lambda=10.0, exponent=3.0)
    grid = discretize(model, 400, omega_max=100.0, params=params)
    states = [
        vacuum_state(params),
        squeezed_state(params, 0.5, mean=(1.0, 0.0)),
        thermal_state(params, kT=2.0, mean=(0.0, -0.7)),
    ]
    report = verify_locality(grid, params, quantum, states, times=np.linspace(0.0, 10.0, 1001))
    assert report.max_deviation <= 1e-6
    assert report.local
    assert report.states == 3
    assert set(report.deviations) == set(COEFFICIENTS)


def test_locality_needs_two_sets(small_grid, params, classical):
    coeffs = extract_coefficients(small_grid, params, classical, times=np.linspace(0.0, 1.0, 11))
    with pytest.raises(InvalidInputError):
        locality_report([coeffs])
    with pytest.raises(InvalidInputError):
        verify_locality(small_grid, params, classical, [vacuum_state(params)])


def test_fully_singular_extraction_cannot_be_integrated(small_grid, params, classical):
    coeffs = extract_coefficients(
        small_grid, params, classical, times=np.linspace(0.0, 1.0, 11), threshold=10.0,
    )
    assert coeffs.flags.all()
    assert np.all(np.isnan(coeffs.D))
    with pytest.raises(CoverageError):
        forward_check(coeffs, vacuum_state(params))


def test_horizon_beyond_coverage(small_grid, params, classical):
    coeffs = extract_coefficients(small_grid, params, classical, times=np.linspace(0.0, 1.0, 11))
    with pytest.raises(CoverageError) as exc:
        forward_check(coeffs, vacuum_state(params), horizon=2.0)
    assert exc.value.diagnostics["covered"] == [0.0, 1.0]


def test_empty_time_grid_is_invalid(small_grid, params, classical):
    with pytest.raises(InvalidInputError):
        extract_coefficients(small_grid, params, classical, times=[])


def test_coefficient_csv(tmp_path, small_grid, params, classical):
    coeffs = extract_coefficients(small_grid, params, classical, times=np.linspace(0.0, 1.0, 11))
    path = str(tmp_path / "coefficients.csv")
    assert coeffs.to_csv(path) == 11
    data = export.read_csv(path)
    assert np.allclose(data["D"], coeffs.D)
    assert np.all(data["flags"] == 0.0)


def test_identical_states_have_zero_deviation(small_grid, params, classical):
    state = squeezed_state(params, 0.2)
    report = verify_locality(small_grid, params, classical, [state, state], times=np.linspace(0.0, 2.0, 21))
    assert report.max_deviation == 0.0


def test_corrupted_covariance_breaks_locality(small_grid, params, classical):
    times = np.linspace(0.0, 2.0, 41)
    base = moment_trajectory(build_system(small_grid, params), vacuum_state(params), classical, times)
    rng = np.random.default_rng(0)
    corrupted = dataclasses.replace(base, noise=base.noise * (1.0 + 1e-3 * rng.standard_normal(base.noise.shape)))
    report = locality_report([
        coefficients_from_moments(base, params=params),
        coefficients_from_moments(base, corrupted, params=params),
    ])
    assert report.max_deviation > 1e-4
    assert not report.local


def test_uncoupled_forward_check_is_free_evolution(params, classical):
    grid = discretize(SpectralModel.zero(), 8, omega_max=8.0, params=params)
    coeffs = extract_coefficients(grid, params, classical, times=np.linspace(0.0, 5.0, 501))
    check = forward_check(coeffs, squeezed_state(params, 0.4, mean=(1.0, 0.0)))
    assert check.deviation <= 1e-8
    assert check.interpolated_times.size == 0
