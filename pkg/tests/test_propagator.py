import numpy as np
import pytest

from qbm.errors import InvalidInputError, PropagationError
from qbm.services.bath import BathGrid, discretize
from qbm.services.propagator import (
    LinearSystem, Method, backward_point, build_system, evolve, evolve_rows, propagate_point,
    symplectic_form,
)
from qbm.services.spectral import CutoffShape, PhysicalParams, SpectralModel


@pytest.fixture
def system(small_grid, params):
    return build_system(small_grid, params)


def test_symplectic_and_volume_preserving(params):
    grid = discretize(SpectralModel(gamma=0.1, Lambda=50.0), 256, params=params)
    T = evolve(build_system(grid, params), 10.0)
    assert T.symplectic_residual() <= 1e-10
    sign, logdet = np.linalg.slogdet(T.matrix)
    assert sign > 0
    assert abs(np.expm1(logdet)) <= 1e-9


def test_uncoupled_oscillator_rotates():
    params = PhysicalParams(m=2.0, Omega=1.5)
    grid = discretize(SpectralModel.zero(), 4, omega_max=4.0, params=params)
    t = 0.7
    block = evolve(build_system(grid, params), t).system_block
    c, s = np.cos(1.5 * t), np.sin(1.5 * t)
    assert np.allclose(block, [[c, s / 3.0], [-3.0 * s, c]], atol=1e-13)


def test_methods_agree():
    params = PhysicalParams()
    model = SpectralModel(gamma=0.1, Lambda=1.5, cutoff_shape=CutoffShape.SHARP)
    system = build_system(discretize(model, 8, params=params), params)
    exact = evolve(system, 5.0, Method.NORMAL_MODE).matrix
    stepped = evolve(system, 5.0, Method.SYMPLECTIC_STEP, dt=2e-4).matrix
    assert np.max(np.abs(exact - stepped)) <= 1e-5 * np.max(np.abs(exact))


def test_inverse_runs_backwards(system):
    T = evolve(system, 2.5)
    assert np.allclose(T.matrix @ T.inverse().matrix, np.eye(system.dim), atol=1e-10)
    assert np.allclose(evolve(system, -2.5).matrix, T.inverse().matrix, atol=1e-10)
    assert evolve(system, 0.0).matrix.tolist() == np.eye(system.dim).tolist()


def test_backward_point_reaches_target(system):
    rng = np.random.default_rng(0)
    target = rng.standard_normal(system.dim)
    origin = backward_point(system, 1.3, target)
    assert np.allclose(propagate_point(evolve(system, 1.3), origin), target, atol=1e-10)


def test_energy_is_conserved(system):
    z0 = np.random.default_rng(1).standard_normal(system.dim)
    z1 = propagate_point(evolve(system, 4.0), z0)
    assert system.energy(z1) == pytest.approx(system.energy(z0), rel=1e-10)


def test_drift_is_J_times_H(system):
    J = symplectic_form(system.dim)
    assert np.allclose(system.drift, J @ system.hamiltonian_matrix)


def test_rows_match_full_matrix(system):
    times = np.array([0.0, 0.4, 3.0])
    rows = (0, 1, 2, 5)
    values = evolve_rows(system, times, rows)
    rates = evolve_rows(system, times, rows, derivative=True)
    for k, t in enumerate(times):
        T = evolve(system, t).matrix
        assert np.allclose(values[k], T[list(rows)], atol=1e-10)
        assert np.allclose(rates[k], (system.drift @ T)[list(rows)], atol=1e-9)


def test_point_dimension_mismatch(system):
    with pytest.raises(InvalidInputError):
        propagate_point(evolve(system, 1.0), np.zeros(3))


def test_non_finite_time_is_invalid(system):
    with pytest.raises(InvalidInputError):
        evolve(system, float("nan"))


def test_unstable_potential_raises(params):
    grid = BathGrid(omegas=np.array([1.0]), couplings=np.array([0.0]), weights=np.array([1.0]))
    system = LinearSystem(
        grid=grid, params=params, potential=np.array([[-1.0, 0.0], [0.0, 1.0]]),
        inverse_mass=np.ones(2),
    )
    with pytest.raises(PropagationError) as exc:
        evolve(system, 1.0)
    assert "min_eigenvalue" in exc.value.diagnostics


def test_transition_matrix_csv(tmp_path, system):
    path = str(tmp_path / "T.csv")
    assert evolve(system, 1.0).to_csv(path) == system.dim
