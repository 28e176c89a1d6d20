"""
Numerical extraction of the local master-equation coefficients

    f' = -(P/m) df/dQ + m OmegaBar^2(t) Q df/dP + 2 gammaBar(t) d(P f)/dP
         + d(t) d^2f/dQdP + D(t) d^2f/dP^2

from exact moment trajectories, a locality check across initial states, and a
forward-integration closure test.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from qbm.errors import CoverageError, InvalidInputError, NumericalError
from qbm.services import export
from qbm.services.bath import BathGrid
from qbm.services.gaussian import (
    GaussianState, MomentTrajectory, moment_trajectory, vacuum_state,
)
from qbm.services.propagator import LinearSystem, build_system
from qbm.services.spectral import BetaSchedule, PhysicalParams

logger = logging.getLogger(__name__)

# relative Wronskian below which a time sample is masked
SINGULAR_THRESHOLD = 1e-8
COEFFICIENTS = ("OmegaBar2", "gammaBar", "d", "D")


@dataclass(frozen=True, eq=False)
class MasterCoefficients:
    times: np.ndarray
    OmegaBar2: np.ndarray
    gammaBar: np.ndarray
    d: np.ndarray
    D: np.ndarray
    flags: np.ndarray            # True where the extraction was singular
    params: PhysicalParams
    system: Optional[LinearSystem] = None
    beta: Optional[BetaSchedule] = None

    def series(self, name: str) -> np.ndarray:
        return getattr(self, name)

    @property
    def flagged_times(self) -> np.ndarray:
        return self.times[self.flags]

    def late_time(self, t_from: float) -> Dict[str, float]:
        """Mean of each coefficient over unflagged samples with t >= t_from."""
        keep = (self.times >= t_from) & ~self.flags
        return {name: float(np.mean(self.series(name)[keep])) for name in COEFFICIENTS}

    def to_csv(self, path: str) -> int:
        return export.write_csv(path, "master_coefficients", {
            "t": self.times,
            "OmegaBar2": self.OmegaBar2,
            "gammaBar": self.gammaBar,
            "d": self.d,
            "D": self.D,
            "flags": self.flags.astype(float),
        })


@dataclass
class LocalityReport:
    max_deviation: float
    deviations: Dict[str, float]
    flagged: int
    tolerance: float
    states: int
    sets: list = field(default_factory=list)

    @property
    def local(self) -> bool:
        return self.max_deviation <= self.tolerance


@dataclass
class ForwardCheck:
    times: np.ndarray
    integrated: np.ndarray       # (T, 5): <Q>, <P>, s_QQ, s_QP, s_PP
    exact: np.ndarray
    deviation: float
    deviations: Dict[str, float]
    interpolated_times: np.ndarray = field(default_factory=lambda: np.zeros(0))


MOMENTS = ("Q", "P", "QQ", "QP", "PP")


def coefficients_from_moments(fundamental: MomentTrajectory,
                              covariance: Optional[MomentTrajectory] = None,
                              params: Optional[PhysicalParams] = None,
                              threshold: float = SINGULAR_THRESHOLD) -> MasterCoefficients:
    """Solve the moment equations pointwise in time.

    Means of the two fundamental solutions (initial (1, 0) and (0, 1)) fix OmegaBar^2 and
    gammaBar; the covariance trajectory then fixes d and D.
    """
    covariance = covariance or fundamental
    params = params or PhysicalParams()
    m = params.m
    M, M_dot = fundamental.M, fundamental.M_dot
    Q1, P1, Q2, P2 = M[:, 0, 0], M[:, 1, 0], M[:, 0, 1], M[:, 1, 1]
    P1_dot, P2_dot = M_dot[:, 1, 0], M_dot[:, 1, 1]

    wronskian = Q1 * P2 - Q2 * P1
    scale = np.hypot(Q1, P1) * np.hypot(Q2, P2)
    flags = np.abs(wronskian) <= threshold * scale
    safe = np.where(flags, 1.0, wronskian)

    # [[m Q1, 2 P1], [m Q2, 2 P2]] [OmegaBar^2, gammaBar] = [-P1', -P2']
    det = 2.0 * m * safe
    Omega2 = (-P1_dot * 2.0 * P2 + 2.0 * P1 * P2_dot) / det
    gamma = (-m * Q1 * P2_dot + m * Q2 * P1_dot) / det

    S, S_dot = covariance.covs, covariance.cov_rates
    s_qq, s_qp, s_pp = S[:, 0, 0], S[:, 0, 1], S[:, 1, 1]
    d = S_dot[:, 0, 1] - s_pp / m + m * Omega2 * s_qq + 2.0 * gamma * s_qp
    D = 0.5 * (S_dot[:, 1, 1] + 2.0 * m * Omega2 * s_qp + 4.0 * gamma * s_pp)

    if flags.any():
        logger.warning(f"{int(flags.sum())} singular extraction times masked")
    mask = lambda x: np.where(flags, np.nan, x)
    return MasterCoefficients(
        times=np.asarray(fundamental.times, dtype=float),
        OmegaBar2=mask(Omega2), gammaBar=mask(gamma), d=mask(d), D=mask(D),
        flags=flags, params=params,
    )


def _default_times(grid: BathGrid, samples: int = 2000) -> np.ndarray:
    return np.linspace(0.0, 0.5 * grid.recurrence_time, samples)


def extract_coefficients(grid: BathGrid, params: PhysicalParams, beta: BetaSchedule,
                         times=None, initial: Optional[GaussianState] = None,
                         threshold: float = SINGULAR_THRESHOLD) -> MasterCoefficients:
    times = _default_times(grid) if times is None else np.asarray(times, dtype=float)
    if times.size == 0:
        raise InvalidInputError("extraction needs at least one time sample")
    system = build_system(grid, params)
    traj = moment_trajectory(system, initial or vacuum_state(params), beta, times)
    coeffs = coefficients_from_moments(traj, params=params, threshold=threshold)
    logger.info(f"Extracted master coefficients on {times.size} samples (N={grid.N})")
    return MasterCoefficients(
        times=coeffs.times, OmegaBar2=coeffs.OmegaBar2, gammaBar=coeffs.gammaBar,
        d=coeffs.d, D=coeffs.D, flags=coeffs.flags, params=params, system=system, beta=beta,
    )


def locality_report(sets: Sequence[MasterCoefficients], tolerance: float = 1e-6) -> LocalityReport:
    """Largest pointwise deviation between coefficient sets, each coefficient relative to
    its own sup-norm on the samples no set has flagged."""
    if len(sets) < 2:
        raise InvalidInputError("locality needs at least two coefficient sets", sets=len(sets))
    flags = np.logical_or.reduce([c.flags for c in sets])
    reference = sets[0]
    deviations = {}
    for name in COEFFICIENTS:
        ref = reference.series(name)[~flags]
        scale = float(np.max(np.abs(ref))) if ref.size else 0.0
        worst = 0.0
        for other in sets[1:]:
            diff = np.abs(other.series(name)[~flags] - ref)
            if diff.size:
                worst = max(worst, float(diff.max()))
        deviations[name] = worst / scale if scale > 0 else worst
    max_dev = max(deviations.values())
    return LocalityReport(
        max_deviation=max_dev, deviations=deviations, flagged=int(flags.sum()),
        tolerance=tolerance, states=len(sets), sets=list(sets),
    )


def verify_locality(grid: BathGrid, params: PhysicalParams, beta: BetaSchedule,
                    initial_states: Sequence[GaussianState], times=None,
                    tolerance: float = 1e-6) -> LocalityReport:
    """Re-extract d and D from each state's covariance trajectory; the means still come
    from the fundamental pair."""
    if len(initial_states) < 2:
        raise InvalidInputError("locality needs at least two initial states", states=len(initial_states))
    times = _default_times(grid) if times is None else np.asarray(times, dtype=float)
    system = build_system(grid, params)
    base = moment_trajectory(system, initial_states[0], beta, times)
    sets = [
        coefficients_from_moments(base, base.with_state(state), params=params)
        for state in initial_states
    ]
    report = locality_report(sets, tolerance)
    if report.local:
        logger.info(f"Locality holds across {report.states} states: max deviation {report.max_deviation:.3e}")
    else:
        logger.warning(f"Locality deviation {report.max_deviation:.3e} exceeds {tolerance:g}")
    return report


def _filled_spline(times: np.ndarray, values: np.ndarray, flags: np.ndarray) -> CubicSpline:
    if flags.any():
        good = ~flags
        values = values.copy()
        values[flags] = np.interp(times[flags], times[good], values[good])
    return CubicSpline(times, values)


def _moment_vector(means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    return np.column_stack([
        means[:, 0], means[:, 1], covs[:, 0, 0], covs[:, 0, 1], covs[:, 1, 1],
    ])


def forward_check(coeffs: MasterCoefficients, initial: GaussianState,
                  exact: Optional[MomentTrajectory] = None,
                  horizon: Optional[float] = None) -> ForwardCheck:
    """Integrate the extracted equation's moment ODEs and compare with exact moments."""
    times = coeffs.times
    horizon = float(times[-1]) if horizon is None else float(horizon)
    if horizon > times[-1] * (1.0 + 1e-12) or horizon < times[0]:
        raise CoverageError(
            "requested horizon is outside the coefficient coverage",
            horizon=horizon, covered=[float(times[0]), float(times[-1])],
        )
    if (~coeffs.flags).sum() < 2:
        raise CoverageError("fewer than two usable coefficient samples")
    keep = times <= horizon
    t_eval = times[keep]

    if exact is None:
        if coeffs.system is None or coeffs.beta is None:
            raise InvalidInputError("exact moments or the generating system are required")
        exact = moment_trajectory(coeffs.system, initial, coeffs.beta, t_eval)
    else:
        exact = exact.with_state(initial)
    exact_vec = _moment_vector(exact.means, exact.covs)[:t_eval.size]

    splines = {name: _filled_spline(times, coeffs.series(name), coeffs.flags) for name in COEFFICIENTS}
    m = coeffs.params.m

    def rhs(t, y):
        w2 = splines["OmegaBar2"](t)
        g = splines["gammaBar"](t)
        q, p, s_qq, s_qp, s_pp = y
        return [
            p / m,
            -m * w2 * q - 2.0 * g * p,
            2.0 * s_qp / m,
            s_pp / m - m * w2 * s_qq - 2.0 * g * s_qp + splines["d"](t),
            -2.0 * m * w2 * s_qp - 4.0 * g * s_pp + 2.0 * splines["D"](t),
        ]

    y0 = [initial.mean[0], initial.mean[1], initial.cov[0, 0], initial.cov[0, 1], initial.cov[1, 1]]
    sol = solve_ivp(rhs, (t_eval[0], t_eval[-1]), y0, method="DOP853",
                    t_eval=t_eval, rtol=1e-10, atol=1e-12)
    if not sol.success:
        raise NumericalError(f"moment integration failed: {sol.message}", horizon=horizon)
    integrated = sol.y.T

    deviations = {}
    for k, name in enumerate(MOMENTS):
        scale = float(np.max(np.abs(exact_vec[:, k])))
        diff = float(np.max(np.abs(integrated[:, k] - exact_vec[:, k])))
        deviations[name] = diff / scale if scale > 0 else diff
    deviation = max(deviations.values())
    logger.info(f"Forward check over [0, {horizon:g}]: max relative deviation {deviation:.3e}")
    return ForwardCheck(
        times=t_eval, integrated=integrated, exact=exact_vec, deviation=deviation,
        deviations=deviations, interpolated_times=coeffs.flagged_times,
    )
