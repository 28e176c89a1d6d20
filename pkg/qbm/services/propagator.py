"""
Exact classical evolution of the system oscillator plus its N bath modes.

Phase-space ordering everywhere is z = (Q, P, q_1, p_1, ..., q_N, p_N): positions sit at
even indices, momenta at odd ones. Bath modes have unit mass.
"""

import enum
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from qbm.errors import InvalidInputError, PropagationError
from qbm.services import export
from qbm.services.bath import BathGrid
from qbm.services.spectral import PhysicalParams

logger = logging.getLogger(__name__)


class Method(str, enum.Enum):
    NORMAL_MODE = "normal_mode"
    SYMPLECTIC_STEP = "symplectic_step"


def symplectic_form(dim: int) -> np.ndarray:
    """Canonical J for the interleaved (q, p) ordering, dim = 2n."""
    return np.kron(np.eye(dim // 2), np.array([[0.0, 1.0], [-1.0, 0.0]]))


@dataclass(frozen=True, eq=False)
class LinearSystem:
    grid: BathGrid
    params: PhysicalParams
    potential: np.ndarray     # W, with V(q) = q^T W q / 2 in the original coordinates
    inverse_mass: np.ndarray  # diagonal of M^-1

    @property
    def n(self) -> int:
        """Number of oscillators (system plus bath)."""
        return self.potential.shape[0]

    @property
    def dim(self) -> int:
        return 2 * self.n

    @cached_property
    def hamiltonian_matrix(self) -> np.ndarray:
        """H with energy z^T H z / 2."""
        H = np.zeros((self.dim, self.dim))
        H[0::2, 0::2] = self.potential
        H[1::2, 1::2] = np.diag(self.inverse_mass)
        return H

    @cached_property
    def drift(self) -> np.ndarray:
        """A with z' = A z, equal to J H."""
        A = np.zeros((self.dim, self.dim))
        A[0::2, 1::2] = np.diag(self.inverse_mass)
        A[1::2, 0::2] = -self.potential
        return A

    @cached_property
    def scale(self) -> np.ndarray:
        """sqrt of the masses; x = scale * q are the mass-weighted positions."""
        return 1.0 / np.sqrt(self.inverse_mass)

    @cached_property
    def normal_modes(self):
        """(frequencies nu, orthogonal U) of the mass-weighted potential."""
        s = self.scale
        weighted = self.potential / np.outer(s, s)
        try:
            nu2, U = np.linalg.eigh(weighted)
        except np.linalg.LinAlgError as exc:
            raise PropagationError(
                f"eigendecomposition failed: {exc}",
                condition=float(np.linalg.cond(weighted)), n=self.n,
            )
        if not np.all(np.isfinite(nu2)) or nu2.min() <= 0:
            raise PropagationError(
                "coupled potential is not positive definite",
                min_eigenvalue=float(nu2.min()), max_eigenvalue=float(nu2.max()),
                condition=float(np.linalg.cond(weighted)),
            )
        return np.sqrt(nu2), U

    @property
    def frequencies(self) -> np.ndarray:
        return self.normal_modes[0]

    def energy(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return 0.5 * float(z @ self.hamiltonian_matrix @ z)


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    matrix: np.ndarray
    t: float

    @property
    def system_block(self) -> np.ndarray:
        return self.matrix[:2, :2]

    def inverse(self) -> "TransitionMatrix":
        J = symplectic_form(self.matrix.shape[0])
        return TransitionMatrix(matrix=-J @ self.matrix.T @ J, t=-self.t)

    def symplectic_residual(self) -> float:
        J = symplectic_form(self.matrix.shape[0])
        return float(np.max(np.abs(self.matrix.T @ J @ self.matrix - J)))

    def to_csv(self, path: str) -> int:
        return export.write_csv(path, "transition_matrix", {
            f"col{k}": self.matrix[:, k] for k in range(self.matrix.shape[1])
        })


def build_system(grid: BathGrid, params: PhysicalParams) -> LinearSystem:
    """Quadratic form of the coupled oscillators, counter-term included.

    m Q'' = -(m Omega^2 + sum g_i^2) Q + sum g_i w_i q_i,  q_i'' = -w_i^2 q_i + g_i w_i Q
    """
    n = grid.N + 1
    g2 = grid.coupling_squares
    W = np.zeros((n, n))
    W[0, 0] = params.m * params.Omega ** 2 + g2.sum()
    W[0, 1:] = W[1:, 0] = -grid.couplings * grid.omegas
    W[np.arange(1, n), np.arange(1, n)] = grid.omegas ** 2
    inverse_mass = np.ones(n)
    inverse_mass[0] = 1.0 / params.m
    return LinearSystem(grid=grid, params=params, potential=W, inverse_mass=inverse_mass)


def _modal_blocks(system: LinearSystem, t: float):
    nu, U = system.normal_modes
    c = np.cos(nu * t)
    sn = np.sin(nu * t)
    C = (U * c) @ U.T
    S = (U * (sn / nu)) @ U.T
    D = -(U * (nu * sn)) @ U.T
    return C, S, D


def _normal_mode(system: LinearSystem, t: float) -> np.ndarray:
    s = system.scale
    C, S, D = _modal_blocks(system, t)
    T = np.empty((system.dim, system.dim))
    T[0::2, 0::2] = C * (s[None, :] / s[:, None])
    T[0::2, 1::2] = S / np.outer(s, s)
    T[1::2, 0::2] = D * np.outer(s, s)
    T[1::2, 1::2] = C * (s[:, None] / s[None, :])
    return T


def default_step(system: LinearSystem) -> float:
    fastest = max(system.params.Omega, float(system.grid.omegas.max()))
    return 1e-3 / fastest


def _leapfrog(system: LinearSystem, t: float, dt: float) -> np.ndarray:
    steps = max(1, int(np.ceil(abs(t) / dt)))
    h = t / steps
    eye = np.eye(system.dim)
    kick = eye.copy()
    kick[1::2, 0::2] -= 0.5 * h * system.potential
    drift = eye.copy()
    drift[0::2, 1::2] += h * np.diag(system.inverse_mass)
    step = kick @ drift @ kick
    return np.linalg.matrix_power(step, steps)


def evolve(system: LinearSystem, t: float, method: Method = Method.NORMAL_MODE,
           dt: Optional[float] = None) -> TransitionMatrix:
    """T(t) with z(t) = T(t) z(0); negative t runs the characteristics backwards."""
    t = float(t)
    if not np.isfinite(t):
        raise InvalidInputError(f"time must be finite, got {t}", field="t")
    method = Method(method)
    if t == 0.0:
        return TransitionMatrix(matrix=np.eye(system.dim), t=0.0)
    if method == Method.NORMAL_MODE:
        matrix = _normal_mode(system, t)
    else:
        dt = default_step(system) if dt is None else float(dt)
        if dt <= 0:
            raise InvalidInputError(f"symplectic step needs dt > 0, got {dt}", field="dt")
        matrix = _leapfrog(system, t, dt)
    return TransitionMatrix(matrix=matrix, t=t)


def evolve_rows(system: LinearSystem, times, rows: Sequence[int],
                derivative: bool = False) -> np.ndarray:
    """Rows of T(t) (or of T'(t) = A T(t)) for many times, shape (len(times), len(rows), dim).

    Built from the normal modes one row at a time, so no full matrix is formed per sample.
    """
    times = np.asarray(times, dtype=float)
    nu, U = system.normal_modes
    s = system.scale
    phase = np.multiply.outer(times, nu)
    cos, sin = np.cos(phase), np.sin(phase)
    if derivative:
        f_cos, f_sin, f_msin = -nu * sin, cos, -(nu ** 2) * cos
    else:
        f_cos, f_sin, f_msin = cos, sin / nu, -nu * sin

    out = np.empty((times.size, len(rows), system.dim))
    for r, row in enumerate(rows):
        j, is_momentum = divmod(int(row), 2)
        u = U[j]
        if is_momentum:
            out[:, r, 0::2] = s[j] * ((f_msin * u) @ U.T) * s[None, :]
            out[:, r, 1::2] = s[j] * ((f_cos * u) @ U.T) / s[None, :]
        else:
            out[:, r, 0::2] = ((f_cos * u) @ U.T) * s[None, :] / s[j]
            out[:, r, 1::2] = ((f_sin * u) @ U.T) / (s[None, :] * s[j])
    return out


def propagate_point(T: TransitionMatrix, z0) -> np.ndarray:
    z0 = np.asarray(z0, dtype=float)
    if z0.shape[-1] != T.matrix.shape[0]:
        raise InvalidInputError(
            "phase-space vector does not match the transition matrix",
            expected=int(T.matrix.shape[0]), got=int(z0.shape[-1]),
        )
    return z0 @ T.matrix.T


def backward_point(system: LinearSystem, t: float, z_final) -> np.ndarray:
    """Initial point whose trajectory reaches z_final at time t."""
    return propagate_point(evolve(system, -t), z_final)
