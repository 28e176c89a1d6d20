"""
Discretisation of the frequency continuum into N bath modes, and Gaussian sampling of
the bath's initial conditions.
"""

import enum
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.special import ndtri

from qbm.errors import InvalidInputError
from qbm.services import export
from qbm.services.spectral import (
    SpectralModel, SpectrumKind, BetaSchedule, PhysicalParams,
)

logger = logging.getLogger(__name__)

# resolution of the cumulative weight used by the equal-weight scheme
_CUMULATIVE_POINTS = 20001


class GridScheme(str, enum.Enum):
    UNIFORM = "uniform"
    EQUAL_WEIGHT = "equal_weight"


@dataclass(frozen=True, eq=False)
class BathGrid:
    omegas: np.ndarray
    couplings: np.ndarray   # g_i, with g_i^2 = g_w^2(w_i) * w_i
    weights: np.ndarray
    m: float = 1.0
    scheme: GridScheme = GridScheme.UNIFORM

    @property
    def N(self) -> int:
        return int(self.omegas.size)

    @property
    def coupling_squares(self) -> np.ndarray:
        return self.couplings ** 2

    @property
    def recurrence_time(self) -> float:
        if self.N == 1:
            return float(2.0 * np.pi / self.weights[0])
        return float(2.0 * np.pi / np.min(np.diff(self.omegas)))

    def kernel(self, times) -> np.ndarray:
        """Discrete kernel K_N(t) = (1/m) sum_i g_i^2 cos(w_i t)."""
        times = np.asarray(times, dtype=float)
        return np.cos(np.multiply.outer(times, self.omegas)) @ self.coupling_squares / self.m

    def noise_correlation(self, beta: BetaSchedule, lags) -> np.ndarray:
        """sum_i (g_i^2 / beta_i) cos(w_i tau)."""
        lags = np.asarray(lags, dtype=float)
        weights = self.coupling_squares * beta.inverse(self.omegas)
        return np.cos(np.multiply.outer(lags, self.omegas)) @ weights

    def to_csv(self, path: str) -> int:
        return export.write_csv(path, "bath_grid", {
            "omega": self.omegas,
            "g2": self.coupling_squares,
            "weight": self.weights,
        })


@dataclass(frozen=True, eq=False)
class BathSample:
    q: np.ndarray
    p: np.ndarray
    seed: Tuple[int, int]


def default_scheme(model: SpectralModel) -> GridScheme:
    if model.kind == SpectrumKind.SUPRA_OHMIC:
        return GridScheme.EQUAL_WEIGHT
    return GridScheme.UNIFORM


def _uniform(model: SpectralModel, N: int, omega_max: float, m: float):
    width = omega_max / N
    omegas = (np.arange(N) + 0.5) * width
    weights = np.full(N, width)
    return omegas, model.coupling(omegas, m) * weights, weights


def _equal_weight(model: SpectralModel, N: int, omega_max: float, m: float):
    fine = np.linspace(0.0, omega_max, _CUMULATIVE_POINTS)
    _, _, breaks = model.support()
    if breaks:
        fine = np.union1d(fine, [b for b in breaks if b <= omega_max])
    cumulative = cumulative_trapezoid(model.coupling(fine, m), fine, initial=0.0)
    total = cumulative[-1]
    if total <= 0:
        logger.warning("Equal-weight grid requested for a zero spectrum, using uniform grid")
        return _uniform(model, N, omega_max, m)

    # invert the cumulative weight on its strictly increasing part
    keep = np.concatenate(([True], np.diff(cumulative) > 0))
    edges = np.interp(np.linspace(0.0, total, N + 1), cumulative[keep], fine[keep])
    omegas = np.interp((np.arange(N) + 0.5) / N * total, cumulative[keep], fine[keep])
    weights = np.diff(edges)
    return omegas, np.full(N, total / N), weights


def discretize(model: SpectralModel, N: int, scheme: Optional[GridScheme] = None,
               omega_max: Optional[float] = None,
               params: Optional[PhysicalParams] = None) -> BathGrid:
    if N is None or int(N) < 1:
        raise InvalidInputError(f"bath needs at least one mode, got N={N}", field="N")
    N = int(N)
    omega_max = model.default_omega_max if omega_max is None else float(omega_max)
    if not np.isfinite(omega_max) or omega_max <= 0:
        raise InvalidInputError(f"omega_max must be positive, got {omega_max}", field="omega_max")
    scheme = default_scheme(model) if scheme is None else GridScheme(scheme)
    m = (params or PhysicalParams()).m

    model.check_integrable()
    if scheme == GridScheme.UNIFORM:
        omegas, g2, weights = _uniform(model, N, omega_max, m)
    else:
        omegas, g2, weights = _equal_weight(model, N, omega_max, m)

    if np.any(np.diff(omegas) <= 0):
        raise InvalidInputError("bath frequencies are not strictly increasing", scheme=scheme.value, N=N)
    logger.debug(f"Discretized {model.kind.value} bath: N={N}, scheme={scheme.value}, omega_max={omega_max}")
    return BathGrid(
        omegas=omegas, couplings=np.sqrt(g2), weights=weights, m=m, scheme=scheme,
    )


def _mode_normals(rng_seed: int, trajectory: int, N: int) -> np.ndarray:
    """Standard normals of shape (2, N); column i depends only on (seed, trajectory, i).

    Philox is counter-based: mode i reads the four words of counter block i, so a
    mode's draw does not change with N or with the order modes are visited.
    """
    key = np.random.SeedSequence([int(rng_seed), int(trajectory)]).generate_state(2, np.uint64)
    words = np.random.Philox(key=key).random_raw(4 * N).reshape(N, 4)[:, :2]
    uniforms = ((words >> np.uint64(11)).astype(float) + 0.5) * 2.0 ** -53
    return ndtri(uniforms).T


def sample_initial(grid: BathGrid, beta: BetaSchedule, rng_seed: int,
                   trajectory: int = 0) -> BathSample:
    """Draw (q, p) from the product Gaussian Var q_i = 1/(beta_i w_i^2), Var p_i = 1/beta_i."""
    var_q, var_p = beta.mode_variances(grid.omegas)
    draws = _mode_normals(rng_seed, trajectory, grid.N)
    return BathSample(
        q=np.sqrt(var_q) * draws[0],
        p=np.sqrt(var_p) * draws[1],
        seed=(int(rng_seed), int(trajectory)),
    )


def sample_batch(grid: BathGrid, beta: BetaSchedule, rng_seed: int, count: int,
                 offset: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """(q, p) arrays of shape (count, N); row k equals sample_initial(..., trajectory=offset+k)."""
    var_q, var_p = beta.mode_variances(grid.omegas)
    draws = np.stack([
        _mode_normals(rng_seed, offset + k, grid.N) for k in range(count)
    ]) if count else np.zeros((0, 2, grid.N))
    return np.sqrt(var_q) * draws[:, 0, :], np.sqrt(var_p) * draws[:, 1, :]


def force_basis(grid: BathGrid, times) -> Tuple[np.ndarray, np.ndarray]:
    """(cos w_i t, sin w_i t), shape (N, len(times)), reusable across many samples."""
    phase = np.multiply.outer(grid.omegas, np.asarray(times, dtype=float))
    return np.cos(phase), np.sin(phase)


def force_batch(grid: BathGrid, q: np.ndarray, p: np.ndarray, times,
                basis: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> np.ndarray:
    """F(t) for each row of (q, p); returns shape (rows, len(times))."""
    q = np.atleast_2d(q)
    p = np.atleast_2d(p)
    if q.shape[-1] != grid.N or p.shape[-1] != grid.N:
        raise InvalidInputError("sample does not match the bath grid", N=grid.N, q=q.shape[-1])
    cos, sin = force_basis(grid, times) if basis is None else basis
    return (q * grid.couplings * grid.omegas) @ cos + (p * grid.couplings) @ sin


def force_history(grid: BathGrid, sample: BathSample, times) -> np.ndarray:
    """F(t) = sum_i g_i [w_i q_i cos(w_i t) + p_i sin(w_i t)] by direct summation."""
    return force_batch(grid, sample.q, sample.p, times)[0]


def warn_recurrence(grid: BathGrid, horizon: float):
    half = 0.5 * grid.recurrence_time
    if horizon > half:
        logger.warning(
            f"Horizon {horizon:g} exceeds half the bath recurrence time {half:g} (N={grid.N})"
        )
