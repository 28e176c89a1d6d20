import dataclasses
import logging

import numpy as np

from qbm.config import MAX_GRID_POINTS
from qbm.errors import InvalidInputError
from qbm.models.scenario import GridSpec, ScenarioContext, ScenarioResult, build_state
from qbm.services import bath as bath_svc
from qbm.services import export
from qbm.services.gaussian import (
    CatState, cat_state, eq10_demo, fringe_visibility, moment_trajectory, purity,
    transport_cat, vacuum_state, wigner_grid,
)
from qbm.services.propagator import build_system

logger = logging.getLogger(__name__)

# default cat separation squared, in units of hbar / m Omega
DEFAULT_SEPARATION2 = 20.0


def emit_grid(state, spec: GridSpec, path: str) -> int:
    """Write (Q, P, f) rows of the state's Wigner function, Q varying slowest."""
    points = spec.q_points * spec.p_points
    if points <= 0:
        raise InvalidInputError("Wigner grid is empty", q_points=spec.q_points, p_points=spec.p_points)
    if points > MAX_GRID_POINTS:
        raise InvalidInputError(
            "Wigner grid exceeds the configured point cap", points=points, cap=MAX_GRID_POINTS,
        )
    Q, P, f = wigner_grid(
        state,
        np.linspace(spec.q_min, spec.q_max, spec.q_points),
        np.linspace(spec.p_min, spec.p_max, spec.p_points),
    )
    return export.write_csv(path, "wigner", {"Q": Q, "P": P, "f": f})


def _cat(ctx: ScenarioContext) -> CatState:
    params = ctx.params
    state = build_state(ctx.config.state, params) if ctx.config.state.kind == "cat" else None
    if state is None or not ctx.config.state.separation:
        a = np.sqrt(DEFAULT_SEPARATION2 * params.hbar / (params.m * params.Omega))
        state = cat_state(params, a, ctx.config.state.phase)
    return state


def _half_life(times: np.ndarray, visibility: np.ndarray):
    below = np.nonzero(visibility <= 0.5 * visibility[0])[0]
    if below.size == 0:
        return None
    i = below[0]
    if i == 0:
        return 0.0
    t0, t1, v0, v1 = times[i - 1], times[i], visibility[i - 1], visibility[i]
    return float(t0 + (0.5 * visibility[0] - v0) * (t1 - t0) / (v1 - v0))


def run_decohere(ctx: ScenarioContext) -> ScenarioResult:
    """Fringe visibility and purity of a cat state under the exact reduced dynamics."""
    params, model, beta = ctx.params, ctx.model, ctx.beta
    num = ctx.config.numerics
    grid = ctx.grid(model)
    bath_svc.warn_recurrence(grid, num.horizon)
    cat = _cat(ctx)
    times = np.linspace(0.0, num.horizon, num.samples)
    traj = moment_trajectory(build_system(grid, params), vacuum_state(params), beta, times)

    visibility = np.empty(times.size)
    purities = np.empty(times.size)
    state = cat
    for i in range(times.size):
        state = transport_cat(traj.reduced_map(i), cat)
        visibility[i] = fringe_visibility(state)
        purities[i] = purity(state, params)

    result = ScenarioResult(summary={})
    path = ctx.path("decoherence.csv")
    result.add(path, export.write_csv(path, "decoherence", {
        "t": times, "visibility": visibility, "purity": purities,
        "noise_QQ": traj.noise[:, 0, 0], "noise_PP": traj.noise[:, 1, 1],
    }))
    for name, s in (("wigner_initial.csv", cat), ("wigner_final.csv", state)):
        path = ctx.path(name)
        result.add(path, emit_grid(s, ctx.config.grid, path))

    half_life = _half_life(times, visibility)
    relaxation = 1.0 / (2.0 * model.gamma) if model.gamma > 0 else None
    late = times > 5.0 / model.Lambda
    result.summary = {
        "half_life": half_life,
        "relaxation_time": relaxation,
        "relaxation_over_half_life": (relaxation / half_life) if (relaxation and half_life) else None,
        "monotone_after_transient": bool(np.all(np.diff(visibility[late]) <= 1e-12)),
        "max_purity": float(purities.max()),
        "final_visibility": float(visibility[-1]),
    }
    return result


def run_eq10(ctx: ScenarioContext) -> ScenarioResult:
    """Purity of a correlated mixture versus an entangled Gaussian for two oscillators."""
    spec = ctx.config.eq10
    report = eq10_demo(ctx.params, spec.separation, spec.c, spec.squeeze, spec.literal)
    result = ScenarioResult(summary=dataclasses.asdict(report))
    path = ctx.path("eq10.csv")
    result.add(path, export.write_csv(path, "eq10", {
        "separation": [report.separation],
        "c": [report.c],
        "omega_bar": [report.omega_bar],
        "mixture_global_purity": [report.mixture_global_purity],
        "mixture_reduced_purity": [report.mixture_reduced_purity],
        "entangled_global_purity": [report.entangled_global_purity],
        "entangled_reduced_purity": [report.entangled_reduced_purity],
        "entangled_admissible": [float(report.entangled_admissible)],
        "squeezed_vacuum_reduced_purity": [report.squeezed_vacuum_reduced_purity],
    }))
    return result


def run_wigner(ctx: ScenarioContext) -> ScenarioResult:
    """Wigner grid of the configured initial state."""
    state = build_state(ctx.config.state, ctx.params)
    result = ScenarioResult(summary={"state": ctx.config.state.kind})
    path = ctx.path("wigner.csv")
    rows = emit_grid(state, ctx.config.grid, path)
    result.add(path, rows)
    result.summary["rows"] = rows
    return result


def get_phase_space_handlers() -> dict:
    return {
        "decohere": run_decohere,
        "eq10": run_eq10,
    }
