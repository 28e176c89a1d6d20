import logging

import numpy as np

from qbm.errors import InvalidInputError
from qbm.models.scenario import ScenarioContext, ScenarioResult, build_state
from qbm.services import bath as bath_svc
from qbm.services import export
from qbm.services.gaussian import GaussianState
from qbm.services.master import extract_coefficients, forward_check, verify_locality
from qbm.services.spectral import BetaKind

logger = logging.getLogger(__name__)


def _gaussian(spec, params) -> GaussianState:
    state = build_state(spec, params)
    if not isinstance(state, GaussianState):
        raise InvalidInputError("coefficient extraction needs Gaussian states", kind=spec.kind)
    return state


def run_extract(ctx: ScenarioContext) -> ScenarioResult:
    """Master-equation coefficients plus the forward closure check."""
    params, model, beta = ctx.params, ctx.model, ctx.beta
    num = ctx.config.numerics
    grid = ctx.grid(model)
    bath_svc.warn_recurrence(grid, num.horizon)
    times = np.linspace(0.0, num.horizon, num.samples)
    initial = _gaussian(ctx.config.state, params)

    coeffs = extract_coefficients(grid, params, beta, times, initial=initial)
    result = ScenarioResult(summary={})
    path = ctx.path("coefficients.csv")
    result.add(path, coeffs.to_csv(path))

    check = forward_check(coeffs, initial)
    late = coeffs.late_time(0.8 * num.horizon)
    summary = {
        "forward_deviation": check.deviation,
        "forward_deviations": check.deviations,
        "flagged": int(coeffs.flags.sum()),
        "late_time": late,
        "recurrence_time": grid.recurrence_time,
    }
    if beta.kind == BetaKind.CLASSICAL:
        summary["markovian_D"] = 2.0 * params.m * model.gamma * params.kT
    result.summary = summary
    return result


def run_locality(ctx: ScenarioContext) -> ScenarioResult:
    """Coefficients re-extracted from several initial states must coincide."""
    params, model, beta = ctx.params, ctx.model, ctx.beta
    num = ctx.config.numerics
    grid = ctx.grid(model)
    bath_svc.warn_recurrence(grid, num.horizon)
    times = np.linspace(0.0, num.horizon, num.samples)
    states = [_gaussian(spec, params) for spec in ctx.config.locality_states]

    report = verify_locality(grid, params, beta, states, times)
    columns = {"t": times}
    for k, coeffs in enumerate(report.sets):
        columns[f"d_{k}"] = coeffs.d
        columns[f"D_{k}"] = coeffs.D

    result = ScenarioResult(summary={})
    path = ctx.path("locality.csv")
    result.add(path, export.write_csv(path, "locality", columns))
    result.summary = {
        "max_deviation": report.max_deviation,
        "deviations": report.deviations,
        "flagged": report.flagged,
        "states": report.states,
        "local": report.local,
    }
    return result


def get_coefficient_handlers() -> dict:
    return {
        "extract": run_extract,
        "locality": run_locality,
    }
