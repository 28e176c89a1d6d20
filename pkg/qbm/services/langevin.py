"""
Generalized Langevin equation of the system oscillator

    Q'' + Omega^2 Q + K(t) Q_I + int_0^t K(t - s) Q'(s) ds = F(t) / m

solved per noise realisation by an implicit trapezoid (Crank-Nicolson) step with a
trapezoid history sum, plus ensembles, back-reaction splitting and impulse response.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from qbm.config import THREADS
from qbm.errors import DivergentIntegralError, InvalidInputError, NumericalError
from qbm.services import bath as bath_svc
from qbm.services.bath import BathGrid
from qbm.services.gaussian import GaussianState
from qbm.services.spectral import (
    BetaSchedule, MemoryKernel, PhysicalParams, SpectralModel, renormalized_mass,
)

logger = logging.getLogger(__name__)

# dt may not exceed this fraction of min(1/Lambda, 1/Omega)
STEP_FRACTION = 0.1
DEFAULT_STEP_FRACTION = 0.02
# trajectories per ensemble work unit, independent of the worker count
BLOCK_SIZE = 200
MAX_JACKKNIFE_GROUPS = 100


@dataclass(frozen=True)
class GLEConfig:
    params: PhysicalParams
    model: SpectralModel
    dt: Optional[float] = None
    horizon: float = 10.0
    history_quadrature: str = "trapezoid"
    external_drive: Optional[Callable] = None
    grid: Optional[BathGrid] = None    # use the discrete kernel K_N of this grid
    slip: bool = True
    truncate_history: bool = False

    def __post_init__(self):
        if self.history_quadrature != "trapezoid":
            raise InvalidInputError(
                f"unknown history quadrature {self.history_quadrature!r}", field="history_quadrature"
            )
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise InvalidInputError(f"horizon must be positive, got {self.horizon}", field="horizon")
        limit = STEP_FRACTION * self.cutoff_time
        if self.dt is None:
            object.__setattr__(self, "dt", DEFAULT_STEP_FRACTION * self.cutoff_time)
        elif self.dt <= 0 or self.dt > limit * (1.0 + 1e-12):
            raise InvalidInputError(
                f"time step {self.dt:g} exceeds {STEP_FRACTION} min(1/Lambda, 1/Omega)",
                dt=self.dt, limit=limit, Lambda=self.model.Lambda, Omega=self.params.Omega,
            )

    @property
    def cutoff_time(self) -> float:
        return min(1.0 / self.model.Lambda, 1.0 / self.params.Omega)

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def kernel_series(self) -> np.ndarray:
        if self.grid is not None:
            return self.grid.kernel(self.times)
        return MemoryKernel(self.model, self.params).series(self.times)

    def drive_series(self) -> np.ndarray:
        if self.external_drive is None:
            return np.zeros(self.steps + 1)
        return np.asarray([self.external_drive(t) for t in self.times], dtype=float)


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    Q: np.ndarray
    Qdot: np.ndarray
    Qddot: np.ndarray
    force: Optional[np.ndarray]
    params: PhysicalParams
    Lambda: float
    seed: Optional[Tuple[int, int]] = None

    @property
    def P(self) -> np.ndarray:
        return self.params.m * self.Qdot


@dataclass(frozen=True, eq=False)
class BackreactionDecomposition:
    times: np.ndarray
    Omega_tilde2: float
    gamma_local: float
    F_BR: np.ndarray
    residual: float


@dataclass(frozen=True, eq=False)
class EnsembleStatistics:
    times: np.ndarray
    mean: np.ndarray        # (T, 2) of (Q, P)
    mean_se: np.ndarray
    cov: np.ndarray         # (T, 2, 2)
    cov_se: np.ndarray
    energy: np.ndarray
    energy_se: np.ndarray
    n_traj: int
    seed: int


@dataclass(frozen=True)
class Impulse:
    t0: float
    width: float
    amplitude: float = 1.0

    def __call__(self, t: float) -> float:
        if t < self.t0 or t > self.t0 + self.width:
            return 0.0
        return self.amplitude * math.sin(math.pi * (t - self.t0) / self.width) ** 2

    @property
    def total(self) -> float:
        return 0.5 * self.amplitude * self.width


@dataclass(frozen=True, eq=False)
class ImpulseResponse:
    ratio: float
    expected_ratio: Optional[float]
    backreaction_ratio: float
    measured_at: float
    times: np.ndarray
    drive: np.ndarray
    momentum: np.ndarray
    free_momentum: np.ndarray
    F_BR: np.ndarray
    warnings: list = field(default_factory=list)


def _history_window(kernel: np.ndarray, rel: float = 1e-8) -> int:
    """Number of kernel samples needed before |K| stays below rel * K(0)."""
    above = np.nonzero(np.abs(kernel) >= rel * abs(kernel[0]))[0]
    return int(above[-1]) + 1 if above.size else 1


def _integrate(kernel: np.ndarray, h: float, Omega2: float, Q_I: np.ndarray, V_I: np.ndarray,
               accel: np.ndarray, slip: bool = True, window: Optional[int] = None):
    """Crank-Nicolson steps for a batch; accel is f(t) = F/m of shape (steps + 1, batch).

    Returns Q, V, A each of shape (steps + 1, batch).
    """
    n_t, n_b = accel.shape
    Q = np.empty((n_t, n_b))
    V = np.empty((n_t, n_b))
    A = np.empty((n_t, n_b))
    slip_term = kernel if slip else np.zeros_like(kernel)
    K0 = kernel[0]
    denom = 1.0 + 0.25 * h * h * (Omega2 + K0)

    Q[0], V[0] = Q_I, V_I
    A[0] = -Omega2 * Q_I - slip_term[0] * Q_I + accel[0]
    for n in range(n_t - 1):
        # history at t_{n+1} without the unknown v_{n+1} endpoint
        lo = 1 if window is None else max(1, n + 1 - window)
        hist = kernel[n + 1 - lo:0:-1] @ V[lo:n + 1] if n >= lo else np.zeros(n_b)
        if lo == 1:
            hist = hist + 0.5 * kernel[n + 1] * V[0]
        hist *= h
        rhs = (V[n] + 0.5 * h * A[n]
               + 0.5 * h * (-Omega2 * (Q[n] + 0.5 * h * V[n])
                            - slip_term[n + 1] * Q_I - hist + accel[n + 1]))
        V[n + 1] = rhs / denom
        Q[n + 1] = Q[n] + 0.5 * h * (V[n] + V[n + 1])
        A[n + 1] = (-Omega2 * Q[n + 1] - slip_term[n + 1] * Q_I
                    - hist - 0.5 * h * K0 * V[n + 1] + accel[n + 1])
    return Q, V, A


def _prepare(config: GLEConfig, kernel: Optional[np.ndarray] = None):
    kernel = config.kernel_series() if kernel is None else kernel
    window = _history_window(kernel) if config.truncate_history else None
    return kernel, window


def solve_gle_batch(config: GLEConfig, Q_I, P_I, forces: Optional[np.ndarray] = None,
                    kernel: Optional[np.ndarray] = None):
    """Vectorised solve_gle; forces has shape (batch, steps + 1). Returns (Q, Qdot, Qddot, F)."""
    Q_I = np.atleast_1d(np.asarray(Q_I, dtype=float))
    P_I = np.atleast_1d(np.asarray(P_I, dtype=float))
    n_t = config.steps + 1
    if forces is None:
        forces = np.zeros((Q_I.size, n_t))
    forces = np.atleast_2d(np.asarray(forces, dtype=float))
    if forces.shape != (Q_I.size, n_t):
        raise InvalidInputError(
            "force record does not match the configured time grid",
            expected=[int(Q_I.size), n_t], got=list(forces.shape),
        )
    total = forces + config.drive_series()
    kernel, window = _prepare(config, kernel)
    m = config.params.m
    Q, V, A = _integrate(
        kernel, config.dt, config.params.Omega ** 2, Q_I, P_I / m, total.T / m,
        slip=config.slip, window=window,
    )
    return Q.T, V.T, A.T, total


def solve_gle(config: GLEConfig, Q_I: float, P_I: float,
              force: Optional[np.ndarray] = None, seed=None) -> Trajectory:
    Q, V, A, total = solve_gle_batch(
        config, [Q_I], [P_I], None if force is None else np.asarray(force)[None, :],
    )
    return Trajectory(
        times=config.times, Q=Q[0], Qdot=V[0], Qddot=A[0], force=total[0],
        params=config.params, Lambda=config.model.Lambda, seed=seed,
    )


def markovian_reference(params: PhysicalParams, gamma: float, Q_I: float, P_I: float, times):
    """Delta-kernel limit Q'' + 2 gamma Q' + Omega^2 Q = 0 after the slip kick
    Q'(0+) = P_I/m - 2 gamma Q_I. Returns (Q, Qdot)."""
    t = np.asarray(times, dtype=float)
    v0 = P_I / params.m - 2.0 * gamma * Q_I
    wd = np.sqrt(complex(params.Omega ** 2 - gamma ** 2))
    decay = np.exp(-gamma * t)
    b = v0 + gamma * Q_I
    if abs(wd) < 1e-12:
        Q = decay * (Q_I + b * t)
        Qdot = decay * (b - gamma * (Q_I + b * t))
        return Q, Qdot
    c, s = np.cos(wd * t), np.sin(wd * t)
    Q = (decay * (Q_I * c + b / wd * s)).real
    Qdot = (decay * (-Q_I * wd * s + b * c - gamma * (Q_I * c + b / wd * s))).real
    return Q, Qdot


def fit_local_damping(traj: Trajectory, Omega_tilde2: Optional[float] = None,
                      t_skip: Optional[float] = None) -> float:
    """Least-squares gamma minimising |m (Q'' + Omega_tilde^2 Q + 2 gamma Q') - F| for t > t_skip."""
    if traj.force is None:
        raise InvalidInputError("trajectory has no force record")
    Omega_tilde2 = traj.params.Omega ** 2 if Omega_tilde2 is None else Omega_tilde2
    t_skip = 5.0 / traj.Lambda if t_skip is None else t_skip
    mask = traj.times > t_skip
    m = traj.params.m
    r = m * (traj.Qddot[mask] + Omega_tilde2 * traj.Q[mask]) - traj.force[mask]
    v = traj.Qdot[mask]
    vv = float(v @ v)
    if vv == 0.0:
        return 0.0
    return float(-(r @ v) / (2.0 * m * vv))


def decompose_backreaction(traj: Trajectory, Omega_tilde2: Optional[float] = None,
                           gamma_local: Optional[float] = None,
                           t_skip: Optional[float] = None) -> BackreactionDecomposition:
    """Split the environment's action into local terms plus F_BR:

        m [Q'' + Omega_tilde^2 Q + 2 gamma_local Q'] = F + F_BR
    """
    if traj.force is None:
        raise InvalidInputError("trajectory has no force record")
    Omega_tilde2 = traj.params.Omega ** 2 if Omega_tilde2 is None else float(Omega_tilde2)
    if gamma_local is None:
        gamma_local = fit_local_damping(traj, Omega_tilde2, t_skip)
    m = traj.params.m
    lhs = m * (traj.Qddot + Omega_tilde2 * traj.Q + 2.0 * gamma_local * traj.Qdot)
    F_BR = lhs - traj.force
    scale = max(float(np.max(np.abs(lhs))), float(np.max(np.abs(traj.force))), 1e-300)
    residual = float(np.max(np.abs(lhs - (traj.force + F_BR)))) / scale
    return BackreactionDecomposition(
        times=traj.times, Omega_tilde2=Omega_tilde2, gamma_local=float(gamma_local),
        F_BR=F_BR, residual=residual,
    )


def _system_draws(initial: GaussianState, seed: int, start: int, count: int) -> np.ndarray:
    draws = np.stack([
        np.random.default_rng([int(seed), start + k, 1]).standard_normal(2) for k in range(count)
    ])
    eig, vec = np.linalg.eigh(initial.cov)
    root = vec * np.sqrt(np.clip(eig, 0.0, None))
    return initial.mean + draws @ root.T


def _jackknife(n: np.ndarray, s1: np.ndarray, s2: np.ndarray):
    """Mean, covariance and their jackknife errors from per-group sums."""
    N, S1, S2 = n.sum(), s1.sum(axis=0), s2.sum(axis=0)
    mean = S1 / N
    cov = (S2 - np.einsum("ti,tj->tij", S1, S1) / N) / (N - 1)

    G = n.size
    if G < 2:
        nan = np.full_like(mean, np.nan)
        return mean, nan, cov, np.full_like(cov, np.nan)
    n_out = (N - n)[:, None, None]
    S1_out = S1[None] - s1
    S2_out = S2[None] - s2
    means_out = S1_out / n_out
    covs_out = (S2_out - np.einsum("gti,gtj->gtij", S1_out, S1_out) / n_out[..., None]) / (n_out[..., None] - 1)
    factor = (G - 1) / G
    mean_se = np.sqrt(factor * np.sum((means_out - means_out.mean(axis=0)) ** 2, axis=0))
    cov_se = np.sqrt(factor * np.sum((covs_out - covs_out.mean(axis=0)) ** 2, axis=0))
    return mean, mean_se, cov, cov_se


def run_ensemble(config: GLEConfig, initial_dist: GaussianState, beta: BetaSchedule,
                 N_traj: int, seed: int, grid: Optional[BathGrid] = None,
                 threads: Optional[int] = None, sample_every: int = 1,
                 block_size: int = BLOCK_SIZE) -> EnsembleStatistics:
    """Moment statistics of (Q, P) over N_traj noise realisations.

    Trajectory k draws its bath from the (seed, k) stream and its system point from
    (seed, k, 1); work is split into fixed blocks so results do not depend on threads.
    """
    if N_traj < 2:
        raise InvalidInputError(f"ensemble needs at least two trajectories, got {N_traj}", field="N_traj")
    grid = grid or config.grid
    if grid is None:
        raise InvalidInputError("ensemble needs a bath grid to draw forces from")
    config = config if config.grid is grid else _with_grid(config, grid)
    bath_svc.warn_recurrence(grid, config.horizon)

    times = config.times
    sampled = slice(None, None, max(1, int(sample_every)))
    kernel = config.kernel_series()
    basis = bath_svc.force_basis(grid, times)
    m, Omega = config.params.m, config.params.Omega

    groups = min(MAX_JACKKNIFE_GROUPS, N_traj)
    group_of = (np.arange(N_traj) * groups) // N_traj
    n_samples = times[sampled].size
    n_g = np.bincount(group_of, minlength=groups).astype(float)
    s1 = np.zeros((groups, n_samples, 2))
    s2 = np.zeros((groups, n_samples, 2, 2))
    e1 = np.zeros((groups, n_samples))
    e2 = np.zeros((groups, n_samples))

    def work(start: int):
        count = min(block_size, N_traj - start)
        q, p = bath_svc.sample_batch(grid, beta, seed, count, offset=start)
        forces = bath_svc.force_batch(grid, q, p, times, basis=basis)
        z0 = _system_draws(initial_dist, seed, start, count)
        Q, V, _, _ = solve_gle_batch(config, z0[:, 0], z0[:, 1], forces, kernel=kernel)
        return start, count, Q[:, sampled], m * V[:, sampled]

    starts = list(range(0, N_traj, block_size))
    workers = max(1, THREADS if threads is None else int(threads))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for start, count, Q, P in pool.map(work, starts):
            g = group_of[start:start + count]
            z = np.stack([Q, P], axis=-1)
            energy = 0.5 * P ** 2 / m + 0.5 * m * Omega ** 2 * Q ** 2
            np.add.at(s1, g, z)
            np.add.at(s2, g, np.einsum("bti,btj->btij", z, z))
            np.add.at(e1, g, energy)
            np.add.at(e2, g, energy ** 2)
            logger.info(f"Ensemble block {start // block_size + 1}/{len(starts)} done")

    mean, mean_se, cov, cov_se = _jackknife(n_g, s1, s2)
    e_mean, e_se, _, _ = _jackknife(n_g, e1[..., None], e2[..., None, None])
    return EnsembleStatistics(
        times=times[sampled], mean=mean, mean_se=mean_se, cov=cov, cov_se=cov_se,
        energy=e_mean[:, 0], energy_se=e_se[:, 0], n_traj=int(N_traj), seed=int(seed),
    )


def _with_grid(config: GLEConfig, grid: BathGrid) -> GLEConfig:
    return GLEConfig(
        params=config.params, model=config.model, dt=config.dt, horizon=config.horizon,
        history_quadrature=config.history_quadrature, external_drive=config.external_drive,
        grid=grid, slip=config.slip, truncate_history=config.truncate_history,
    )


def impulse_response(config: GLEConfig, impulse: Impulse) -> ImpulseResponse:
    """Momentum delivered by a slow force pulse, relative to the uncoupled oscillator."""
    Lambda = config.model.Lambda
    warnings = []
    if impulse.width < 10.0 / Lambda or impulse.t0 < 10.0 / Lambda:
        message = (f"impulse (t0={impulse.t0:g}, width={impulse.width:g}) is not slow on the "
                   f"cutoff timescale 1/Lambda={1.0 / Lambda:g}; suppression not expected")
        logger.warning(message)
        warnings.append(message)

    measured_at = impulse.t0 + impulse.width + 5.0 / Lambda
    horizon = max(config.horizon, measured_at + config.dt)
    coupled_cfg = GLEConfig(
        params=config.params, model=config.model, dt=config.dt, horizon=horizon,
        external_drive=impulse, grid=config.grid, slip=config.slip,
    )
    free_cfg = GLEConfig(
        params=config.params, model=SpectralModel.zero(), dt=config.dt, horizon=horizon,
        external_drive=impulse, slip=config.slip,
    )
    coupled = solve_gle(coupled_cfg, 0.0, 0.0)
    free = solve_gle(free_cfg, 0.0, 0.0)

    idx = int(round(measured_at / config.dt))
    free_peak = float(np.max(np.abs(free.P)))
    if abs(free.P[idx]) <= 1e-6 * free_peak or free_peak == 0.0:
        raise NumericalError(
            "uncoupled momentum vanishes at the measurement time; ratio undefined",
            measured_at=float(free.times[idx]), free_momentum=float(free.P[idx]), free_peak=free_peak,
        )
    ratio = float(coupled.P[idx] / free.P[idx])

    split = decompose_backreaction(coupled, config.params.Omega ** 2, 0.0)
    pulse = (coupled.times >= impulse.t0) & (coupled.times <= impulse.t0 + impulse.width)
    backreaction_ratio = float(-split.F_BR[pulse].sum() / coupled.force[pulse].sum())

    try:
        dm = renormalized_mass(config.model, config.params)
        expected = config.params.m / (config.params.m + dm)
    except DivergentIntegralError:
        expected = None

    logger.info(f"Impulse response ratio {ratio:.6f} (adiabatic estimate {expected})")
    return ImpulseResponse(
        ratio=ratio, expected_ratio=expected, backreaction_ratio=backreaction_ratio,
        measured_at=float(coupled.times[idx]), times=coupled.times, drive=coupled.force,
        momentum=coupled.P, free_momentum=free.P, F_BR=split.F_BR, warnings=warnings,
    )


def sample_trajectory(config: GLEConfig, initial_dist: GaussianState, beta: BetaSchedule,
                      seed: int, index: int = 0, grid: Optional[BathGrid] = None) -> Trajectory:
    """Ensemble member ``index`` of run_ensemble(..., seed) as a full Trajectory."""
    grid = grid or config.grid
    if grid is None:
        raise InvalidInputError("sampling a trajectory needs a bath grid")
    config = config if config.grid is grid else _with_grid(config, grid)
    sample = bath_svc.sample_initial(grid, beta, seed, index)
    force = bath_svc.force_history(grid, sample, config.times)
    z0 = _system_draws(initial_dist, seed, index, 1)[0]
    return solve_gle(config, z0[0], z0[1], force, seed=(int(seed), int(index)))
