import logging

import numpy as np
from scipy.integrate import trapezoid

from qbm.errors import DivergentIntegralError, InvalidInputError
from qbm.models.scenario import ScenarioContext, ScenarioResult, build_state
from qbm.services import bath as bath_svc
from qbm.services import export
from qbm.services.gaussian import GaussianState, moment_trajectory
from qbm.services.langevin import (
    GLEConfig, Impulse, decompose_backreaction, impulse_response, run_ensemble, sample_trajectory,
)
from qbm.services.propagator import build_system
from qbm.services.spectral import (
    BetaKind, MemoryKernel, SpectrumKind, mass_for_ratio, noise_correlation_at, renormalized_mass,
)

logger = logging.getLogger(__name__)


def _mass_or_none(model, params):
    try:
        return renormalized_mass(model, params)
    except DivergentIntegralError as e:
        logger.info(f"No adiabatic mass for this spectrum: {e}")
        return None


def run_kernel(ctx: ScenarioContext) -> ScenarioResult:
    """Memory kernel, noise correlation and the discrete-bath kernel on one time grid."""
    params, model, beta = ctx.params, ctx.model, ctx.beta
    num = ctx.config.numerics
    times = np.linspace(0.0, num.horizon, num.samples)

    K = MemoryKernel(model, params).series(times)
    nu = np.asarray(noise_correlation_at(model, beta, times))
    grid = ctx.grid(model)
    K_N = grid.kernel(times)

    result = ScenarioResult(summary={})
    path = ctx.path("kernel.csv")
    result.add(path, export.write_csv(path, "kernel", {"t": times, "K": K, "nu": nu, "K_N": K_N}))
    path = ctx.path("bath_grid.csv")
    result.add(path, grid.to_csv(path))

    inside = times <= 0.5 * grid.recurrence_time
    K0 = float(K[0])
    summary = {
        "K0": K0,
        "nu0": float(nu[0]),
        "noise_integral": float(trapezoid(nu, times)),
        "renormalized_mass": _mass_or_none(model, params),
        "recurrence_time": grid.recurrence_time,
        "kernel_grid_deviation": float(np.max(np.abs(K_N[inside] - K[inside])) / abs(K0)) if K0 else 0.0,
    }
    if model.kind == SpectrumKind.OHMIC and beta.kind == BetaKind.CLASSICAL:
        summary["fdr_weight"] = 2.0 * params.m * model.gamma * params.kT
    result.summary = summary
    return result


def _gaussian_initial(ctx: ScenarioContext) -> GaussianState:
    state = build_state(ctx.config.state, ctx.params)
    if not isinstance(state, GaussianState):
        raise InvalidInputError("this scenario needs a Gaussian initial state", kind=ctx.config.state.kind)
    return state


def run_simulate(ctx: ScenarioContext) -> ScenarioResult:
    """Monte Carlo ensemble of the Langevin equation against the exact reduced moments."""
    params, model, beta = ctx.params, ctx.model, ctx.beta
    num = ctx.config.numerics
    grid = ctx.grid(model)
    config = GLEConfig(
        params=params, model=model, dt=num.dt, horizon=num.horizon, grid=grid,
        slip=num.slip, truncate_history=num.truncate_history,
    )
    initial = _gaussian_initial(ctx)
    every = max(1, config.steps // num.samples)
    stats = run_ensemble(
        config, initial, beta, num.N_traj, ctx.seed, grid=grid,
        threads=ctx.threads, sample_every=every,
    )
    exact = moment_trajectory(build_system(grid, params), initial, beta, stats.times)
    exact_covs = exact.covs

    pairs = [(0, 0), (0, 1), (1, 1)]
    cells = []
    for i, j in pairs:
        se = stats.cov_se[1:, i, j]
        cells.append(np.abs(stats.cov[1:, i, j] - exact_covs[1:, i, j]) <= 3.0 * se)
    within = float(np.mean(np.concatenate(cells)))

    result = ScenarioResult(summary={}, seeds={"seed": ctx.seed, "trajectories": num.N_traj})
    columns = {
        "t": stats.times,
        "Q": stats.mean[:, 0], "P": stats.mean[:, 1],
        "QQ": stats.cov[:, 0, 0], "QP": stats.cov[:, 0, 1], "PP": stats.cov[:, 1, 1],
        "se_Q": stats.mean_se[:, 0], "se_P": stats.mean_se[:, 1],
        "se_QQ": stats.cov_se[:, 0, 0], "se_QP": stats.cov_se[:, 0, 1], "se_PP": stats.cov_se[:, 1, 1],
        "exact_QQ": exact_covs[:, 0, 0], "exact_QP": exact_covs[:, 0, 1], "exact_PP": exact_covs[:, 1, 1],
        "energy": stats.energy, "se_energy": stats.energy_se,
    }
    path = ctx.path("moments.csv")
    result.add(path, export.write_csv(path, "ensemble_moments", columns))

    traj = sample_trajectory(config, initial, beta, ctx.seed, 0, grid=grid)
    split = decompose_backreaction(traj)
    path = ctx.path("trajectory.csv")
    result.add(path, export.write_csv(path, "trajectory", {
        "t": traj.times, "Q": traj.Q, "P": traj.P, "F": traj.force, "F_BR": split.F_BR,
    }))

    result.summary = {
        "n_traj": stats.n_traj,
        "fraction_within_3se": within,
        "gamma_local": split.gamma_local,
        "recurrence_time": grid.recurrence_time,
        "dt": config.dt,
    }
    logger.info(f"Ensemble of {stats.n_traj}: {within:.1%} of covariance cells within 3 SE")
    return result


def run_counterpunch(ctx: ScenarioContext) -> ScenarioResult:
    """Slow force pulse on a supra-Ohmic oscillator: momentum suppression by m / (m + dm)."""
    params, model = ctx.params, ctx.model
    num = ctx.config.numerics
    spec = ctx.config.impulse
    if spec.mass_ratio is not None:
        model = mass_for_ratio(model, spec.mass_ratio * params.m, params)
    Lambda = model.Lambda
    t0 = spec.t0 if spec.t0 is not None else 20.0 / Lambda
    width = spec.width if spec.width is not None else 20.0 / Lambda

    config = GLEConfig(
        params=params, model=model, dt=num.dt, horizon=t0 + width + 10.0 / Lambda, slip=num.slip,
    )
    response = impulse_response(config, Impulse(t0=t0, width=width, amplitude=spec.amplitude))

    result = ScenarioResult(summary={})
    path = ctx.path("counterpunch.csv")
    result.add(path, export.write_csv(path, "counterpunch", {
        "t": response.times, "drive": response.drive, "P": response.momentum,
        "P_free": response.free_momentum, "F_BR": response.F_BR,
    }))
    result.summary = {
        "ratio": response.ratio,
        "expected_ratio": response.expected_ratio,
        "backreaction_ratio": response.backreaction_ratio,
        "measured_at": response.measured_at,
        "gamma": model.gamma,
        "renormalized_mass": _mass_or_none(model, params),
        "warnings": response.warnings,
    }
    return result


def get_dynamics_handlers() -> dict:
    return {
        "kernel": run_kernel,
        "simulate": run_simulate,
        "counterpunch": run_counterpunch,
    }
