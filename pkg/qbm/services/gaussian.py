"""
Reduced Wigner functions of the system oscillator.

Two families are closed under the linear dynamics: Gaussians (mean + covariance) and
finite sums of Gaussian-times-cosine components. Both are transported exactly by the
reduced map (M, noise) obtained from the full-system transition matrix, and all
normalisations and purities are closed-form Gaussian integrals.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import erf

from qbm.errors import InvalidInputError, SingularStateError
from qbm.services.bath import BathGrid
from qbm.services.propagator import (
    LinearSystem, TransitionMatrix, evolve_rows, symplectic_form,
)
from qbm.services.spectral import BetaSchedule, PhysicalParams

logger = logging.getLogger(__name__)

# normalisation slack accepted by purity()
NORM_TOL = 1e-8


def _check_covariance(cov: np.ndarray, what: str = "covariance"):
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise InvalidInputError(f"{what} must be square", shape=list(cov.shape))
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-14 * max(1.0, np.abs(cov).max())):
        raise InvalidInputError(f"{what} is not symmetric")
    eig = np.linalg.eigvalsh(cov)
    if eig.min() < -1e-12 * max(np.trace(cov), 1e-300):
        raise InvalidInputError(f"{what} is not positive semidefinite", min_eigenvalue=float(eig.min()))


def _gaussian(z: np.ndarray, center: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """N(z; center, cov) for z of shape (..., d)."""
    eig = np.linalg.eigvalsh(cov)
    if eig.min() <= 1e-14 * max(eig.max(), 1e-300):
        raise SingularStateError("singular covariance", min_eigenvalue=float(eig.min()))
    d = z - center
    solved = np.linalg.solve(cov, d.reshape(-1, center.size).T).T.reshape(d.shape)
    quad = np.sum(d * solved, axis=-1)
    norm = (2.0 * np.pi) ** (center.size / 2.0) * np.sqrt(np.prod(eig))
    return np.exp(-0.5 * quad) / norm


def _stack(Q, P) -> np.ndarray:
    Q, P = np.broadcast_arrays(np.asarray(Q, dtype=float), np.asarray(P, dtype=float))
    return np.stack([Q, P], axis=-1)


@dataclass(frozen=True, eq=False)
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size) or mean.size % 2:
            raise InvalidInputError(
                "mean and covariance dimensions do not match",
                mean=int(mean.size), cov=list(cov.shape),
            )
        _check_covariance(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def norm(self) -> float:
        return 1.0

    def density(self, z) -> np.ndarray:
        return _gaussian(np.asarray(z, dtype=float), self.mean, self.cov)

    def marginal(self, keep: Sequence[int]) -> "GaussianState":
        keep = list(keep)
        return GaussianState(mean=self.mean[keep], cov=self.cov[np.ix_(keep, keep)])


@dataclass(frozen=True, eq=False)
class CatComponent:
    """weight * N(z; center, cov) * cos(wavevector . (z - center) + phase)."""

    weight: float
    center: np.ndarray
    cov: np.ndarray
    wavevector: np.ndarray
    phase: float = 0.0

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).ravel()
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))
        k = np.zeros(center.size) if self.wavevector is None else np.asarray(self.wavevector, dtype=float).ravel()
        object.__setattr__(self, "wavevector", k)
        if self.cov.shape != (center.size, center.size) or k.size != center.size:
            raise InvalidInputError("component dimensions do not match", dim=int(center.size))
        _check_covariance(self.cov, "component covariance")

    @property
    def fringed(self) -> bool:
        return bool(np.any(self.wavevector != 0))

    @property
    def integral(self) -> float:
        k = self.wavevector
        return self.weight * np.cos(self.phase) * np.exp(-0.5 * k @ self.cov @ k)

    @property
    def peak(self) -> float:
        d = self.center.size
        return abs(self.weight) / ((2.0 * np.pi) ** (d / 2.0) * np.sqrt(np.linalg.det(self.cov)))

    def density(self, z: np.ndarray) -> np.ndarray:
        envelope = _gaussian(z, self.center, self.cov)
        if not self.fringed and self.phase == 0.0:
            return self.weight * envelope
        return self.weight * envelope * np.cos((z - self.center) @ self.wavevector + self.phase)


@dataclass(frozen=True, eq=False)
class CatState:
    components: Tuple[CatComponent, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise InvalidInputError("cat state needs at least one component")
        if len({c.center.size for c in comps}) != 1:
            raise InvalidInputError("components live in different dimensions")
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return self.components[0].center.size

    @property
    def norm(self) -> float:
        return float(sum(c.integral for c in self.components))

    def density(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return sum(c.density(z) for c in self.components)

    def marginal(self, keep: Sequence[int]) -> "CatState":
        keep = list(keep)
        drop = [i for i in range(self.dim) if i not in keep]
        out = []
        for c in self.components:
            S = c.cov
            Sxx = S[np.ix_(keep, keep)]
            Sxy = S[np.ix_(keep, drop)]
            Syy = S[np.ix_(drop, drop)]
            kx, ky = c.wavevector[keep], c.wavevector[drop]
            # integrate e^{i k.(z-c)} N(z) over the dropped coordinates
            shift = np.linalg.solve(Sxx, Sxy @ ky) if drop else np.zeros(len(keep))
            cond = Syy - Sxy.T @ np.linalg.solve(Sxx, Sxy) if drop else np.zeros((0, 0))
            damping = np.exp(-0.5 * ky @ cond @ ky) if drop else 1.0
            out.append(CatComponent(
                weight=c.weight * damping, center=c.center[keep], cov=Sxx,
                wavevector=kx + shift, phase=c.phase,
            ))
        return CatState(components=tuple(out))


@dataclass(frozen=True, eq=False)
class ReducedMap:
    """System-sector dynamics: mean -> M mean, cov -> M cov M^T + noise."""

    M: np.ndarray
    noise: np.ndarray
    t: float = 0.0


def vacuum_state(params: PhysicalParams, mean=(0.0, 0.0)) -> GaussianState:
    var_q, var_p = params.ground_variances
    return GaussianState(mean=np.asarray(mean, dtype=float), cov=np.diag([var_q, var_p]))


def thermal_state(params: PhysicalParams, kT: Optional[float] = None, mean=(0.0, 0.0)) -> GaussianState:
    """Quantum thermal oscillator state, coth(hbar Omega / 2kT) times the vacuum."""
    kT = params.kT if kT is None else kT
    x = params.hbar * params.Omega / (2.0 * kT) if kT > 0 else np.inf
    factor = 1.0 / np.tanh(x) if np.isfinite(x) else 1.0
    var_q, var_p = params.ground_variances
    return GaussianState(mean=np.asarray(mean, dtype=float), cov=factor * np.diag([var_q, var_p]))


def squeezed_state(params: PhysicalParams, r: float, mean=(0.0, 0.0)) -> GaussianState:
    var_q, var_p = params.ground_variances
    return GaussianState(
        mean=np.asarray(mean, dtype=float),
        cov=np.diag([var_q * np.exp(-2.0 * r), var_p * np.exp(2.0 * r)]),
    )


def cat_state(params: PhysicalParams, a: float, phase: float = 0.0) -> CatState:
    """Superposition of two coherent lumps at Q = +a and Q = -a.

    The interference term sits at the origin with fringes along P of wavevector 2a/hbar.
    """
    var_q, var_p = params.ground_variances
    cov = np.diag([var_q, var_p])
    overlap = np.exp(-a * a * params.m * params.Omega / params.hbar)
    lump = 1.0 / (2.0 * (1.0 + overlap * np.cos(phase)))
    k = np.array([0.0, 2.0 * a / params.hbar])
    return CatState(components=(
        CatComponent(weight=lump, center=[a, 0.0], cov=cov, wavevector=None),
        CatComponent(weight=lump, center=[-a, 0.0], cov=cov, wavevector=None),
        CatComponent(weight=2.0 * lump, center=[0.0, 0.0], cov=cov, wavevector=k, phase=phase),
    ))


def two_mode_squeezed(params: PhysicalParams, r: float) -> GaussianState:
    """Two-mode squeezed vacuum in the (Q1, P1, Q2, P2) ordering."""
    var_q, var_p = params.ground_variances
    ch, sh = np.cosh(2.0 * r), np.sinh(2.0 * r)
    cov = np.array([
        [var_q * ch, 0.0, var_q * sh, 0.0],
        [0.0, var_p * ch, 0.0, -var_p * sh],
        [var_q * sh, 0.0, var_q * ch, 0.0],
        [0.0, -var_p * sh, 0.0, var_p * ch],
    ])
    return GaussianState(mean=np.zeros(4), cov=cov)


def is_quantum_admissible(state: GaussianState, params: PhysicalParams, tol: float = 1e-9) -> bool:
    """cov + (i hbar / 2) J is positive semidefinite."""
    J = symplectic_form(state.dim)
    eig = np.linalg.eigvalsh(state.cov + 0.5j * params.hbar * J)
    return bool(eig.min() >= -tol * max(np.trace(state.cov), params.hbar))


def bath_variances(grid: BathGrid, beta: BetaSchedule) -> np.ndarray:
    """Diagonal of the initial environment covariance in (q_1, p_1, q_2, ...) order."""
    var_q, var_p = beta.mode_variances(grid.omegas)
    return np.column_stack([var_q, var_p]).ravel()


def reduced_map(T: TransitionMatrix, grid: BathGrid, beta: BetaSchedule) -> ReducedMap:
    if T.matrix.shape[0] != 2 * (grid.N + 1):
        raise InvalidInputError(
            "transition matrix does not match the bath grid",
            dim=int(T.matrix.shape[0]), N=grid.N,
        )
    R = T.matrix[:2, 2:]
    return ReducedMap(M=T.matrix[:2, :2].copy(), noise=(R * bath_variances(grid, beta)) @ R.T, t=T.t)


def reduce_moments(T: TransitionMatrix, sys0: GaussianState, grid: BathGrid,
                   beta: BetaSchedule) -> GaussianState:
    """Exact reduced moments at T.t for the factorised initial condition sys0 (x) bath."""
    if sys0.dim != 2:
        raise InvalidInputError("initial system state must be a single oscillator", dim=sys0.dim)
    rmap = reduced_map(T, grid, beta)
    return GaussianState(
        mean=rmap.M @ sys0.mean,
        cov=rmap.M @ sys0.cov @ rmap.M.T + rmap.noise,
    )


@dataclass(frozen=True, eq=False)
class MomentTrajectory:
    """Exact reduced moments and their time derivatives on a time grid.

    M, noise are the reduced map per time; means/covs belong to the initial state sys0.
    """

    times: np.ndarray
    M: np.ndarray
    M_dot: np.ndarray
    noise: np.ndarray
    noise_dot: np.ndarray
    sys0: GaussianState

    def with_state(self, sys0: GaussianState) -> "MomentTrajectory":
        return replace(self, sys0=sys0)

    @property
    def means(self) -> np.ndarray:
        return self.M @ self.sys0.mean

    @property
    def mean_rates(self) -> np.ndarray:
        return self.M_dot @ self.sys0.mean

    @property
    def covs(self) -> np.ndarray:
        S = self.sys0.cov
        return self.M @ S @ np.swapaxes(self.M, 1, 2) + self.noise

    @property
    def cov_rates(self) -> np.ndarray:
        S = self.sys0.cov
        half = self.M_dot @ S @ np.swapaxes(self.M, 1, 2)
        return half + np.swapaxes(half, 1, 2) + self.noise_dot

    def reduced_map(self, index: int) -> ReducedMap:
        return ReducedMap(M=self.M[index], noise=self.noise[index], t=float(self.times[index]))

    def state(self, index: int) -> GaussianState:
        return GaussianState(mean=self.means[index], cov=self.covs[index])


def moment_trajectory(system: LinearSystem, sys0: GaussianState, beta: BetaSchedule,
                      times, chunk: int = 256) -> MomentTrajectory:
    """Exact moments from the normal-mode rows of T(t); rates from T'(t) = A T(t)."""
    times = np.asarray(times, dtype=float)
    env = bath_variances(system.grid, beta)
    n_t = times.size
    M = np.empty((n_t, 2, 2))
    M_dot = np.empty((n_t, 2, 2))
    noise = np.empty((n_t, 2, 2))
    noise_dot = np.empty((n_t, 2, 2))
    for start in range(0, n_t, chunk):
        block = slice(start, min(start + chunk, n_t))
        rows = evolve_rows(system, times[block], (0, 1))
        rates = evolve_rows(system, times[block], (0, 1), derivative=True)
        R, R_dot = rows[:, :, 2:], rates[:, :, 2:]
        M[block] = rows[:, :, :2]
        M_dot[block] = rates[:, :, :2]
        noise[block] = (R * env) @ np.swapaxes(R, 1, 2)
        cross = (R_dot * env) @ np.swapaxes(R, 1, 2)
        noise_dot[block] = cross + np.swapaxes(cross, 1, 2)
    return MomentTrajectory(
        times=times, M=M, M_dot=M_dot, noise=noise, noise_dot=noise_dot, sys0=sys0,
    )


def transport_gaussian(rmap: ReducedMap, state: GaussianState) -> GaussianState:
    return GaussianState(
        mean=rmap.M @ state.mean,
        cov=rmap.M @ state.cov @ rmap.M.T + rmap.noise,
    )


def transport_cat(rmap: ReducedMap, cat: CatState) -> CatState:
    """Push every component through z -> M z, then convolve with N(0, noise)."""
    if cat.dim != rmap.M.shape[0]:
        raise InvalidInputError("reduced map does not match the state", dim=cat.dim)
    det = np.linalg.det(rmap.M)
    if abs(det) < 1e-14:
        raise SingularStateError("reduced map is singular", det=float(det))
    M_inv_T = np.linalg.inv(rmap.M).T
    out = []
    for c in cat.components:
        center = rmap.M @ c.center
        cov_mapped = rmap.M @ c.cov @ rmap.M.T
        k_mapped = M_inv_T @ c.wavevector
        cov = cov_mapped + rmap.noise
        cov = 0.5 * (cov + cov.T)
        if c.fringed:
            k = np.linalg.solve(cov, cov_mapped @ k_mapped)
            damping = np.exp(-0.5 * k_mapped @ cov_mapped @ k_mapped + 0.5 * k @ cov @ k)
        else:
            k, damping = k_mapped, 1.0
        out.append(CatComponent(
            weight=c.weight * damping, center=center, cov=cov, wavevector=k, phase=c.phase,
        ))
    return CatState(components=tuple(out))


def transport(rmap: ReducedMap, state):
    if isinstance(state, CatState):
        return transport_cat(rmap, state)
    return transport_gaussian(rmap, state)


def wigner_eval(state, Q, P) -> np.ndarray:
    """Reduced Wigner function of a single-oscillator state at (Q, P)."""
    if state.dim != 2:
        raise InvalidInputError("wigner_eval needs a single-oscillator state", dim=state.dim)
    values = state.density(_stack(Q, P))
    return float(values) if np.ndim(values) == 0 else values


def wigner_grid(state, q_axis, p_axis):
    """(Q, P, f) on the product grid, Q varying slowest."""
    Q, P = np.meshgrid(np.asarray(q_axis, dtype=float), np.asarray(p_axis, dtype=float), indexing="ij")
    return Q.ravel(), P.ravel(), np.asarray(wigner_eval(state, Q, P)).ravel()


def _pair_overlap(a: CatComponent, b: CatComponent) -> float:
    """Integral of the product of two Gaussian-cosine components."""
    S = a.cov + b.cov
    diff = a.center - b.center
    d = a.center.size
    envelope = np.exp(-0.5 * diff @ np.linalg.solve(S, diff)) / (
        (2.0 * np.pi) ** (d / 2.0) * np.sqrt(np.linalg.det(S))
    )
    if not a.fringed and not b.fringed and a.phase == 0.0 and b.phase == 0.0:
        return a.weight * b.weight * envelope
    inv_a, inv_b = np.linalg.inv(a.cov), np.linalg.inv(b.cov)
    cov_p = np.linalg.inv(inv_a + inv_b)
    center_p = cov_p @ (inv_a @ a.center + inv_b @ b.center)
    total = 0.0
    for sign in (1.0, -1.0):
        kappa = a.wavevector + sign * b.wavevector
        theta = (kappa @ center_p - a.wavevector @ a.center - sign * b.wavevector @ b.center
                 + a.phase + sign * b.phase)
        total += np.cos(theta) * np.exp(-0.5 * kappa @ cov_p @ kappa)
    return a.weight * b.weight * envelope * 0.5 * total


def purity(state, params: PhysicalParams) -> float:
    """(2 pi hbar)^n times the phase-space integral of f^2, n the number of oscillators."""
    norm = state.norm
    if not np.isfinite(norm) or abs(norm - 1.0) > NORM_TOL:
        raise InvalidInputError("state is not normalised", norm=float(norm))
    n = state.dim // 2
    if isinstance(state, GaussianState):
        det = np.linalg.det(state.cov)
        if det <= 0:
            raise SingularStateError("singular covariance", det=float(det))
        return float((params.hbar / 2.0) ** n / np.sqrt(det))
    comps = state.components
    total = 0.0
    for i, a in enumerate(comps):
        total += _pair_overlap(a, a)
        for b in comps[i + 1:]:
            total += 2.0 * _pair_overlap(a, b)
    return float((2.0 * np.pi * params.hbar) ** n * total)


def fringe_visibility(cat: CatState) -> float:
    """Peak fringe amplitude over twice the geometric mean of the lump peaks."""
    fringes = [c for c in cat.components if c.fringed]
    lumps = [c for c in cat.components if not c.fringed]
    if not fringes:
        raise InvalidInputError("state has no interference component")
    if not lumps:
        raise InvalidInputError("state has no lumps to compare the fringes with")
    lump_mean = np.exp(np.mean([np.log(c.peak) for c in lumps]))
    return float(max(c.peak for c in fringes) / (2.0 * lump_mean))


def wigner_by_characteristics(rmap: ReducedMap, initial_density: Callable, Q, P,
                              order: int = 40) -> np.ndarray:
    """f(Q, P; t) from the initial system density by backward characteristics.

    Each final point is traced back through M^-1 after removing an environment kick u,
    with the Gaussian kick distribution integrated by Gauss-Hermite quadrature.
    """
    det = np.linalg.det(rmap.M)
    if abs(det) < 1e-14:
        raise SingularStateError("reduced map is singular", det=float(det))
    M_inv = np.linalg.inv(rmap.M)
    z = _stack(Q, P)
    eig, vec = np.linalg.eigh(0.5 * (rmap.noise + rmap.noise.T))
    root = vec * np.sqrt(np.clip(eig, 0.0, None))
    x, w = hermegauss(order)
    w = w / w.sum()
    out = np.zeros(z.shape[:-1])
    for xi, wi in zip(x, w):
        for xj, wj in zip(x, w):
            u = root @ np.array([xi, xj])
            origin = (z - u) @ M_inv.T
            out += wi * wj * initial_density(origin)
    return out / abs(det)


@dataclass
class Eq10Report:
    separation: float
    c: float
    omega_bar: float
    squeeze: float
    mixture_global_purity: float
    mixture_reduced_purity: float
    entangled_global_purity: float
    entangled_reduced_purity: float
    entangled_admissible: bool
    squeezed_vacuum_reduced_purity: float
    warnings: list = field(default_factory=list)


def literal_mixture_norm(params: PhysicalParams, a: float, half_width: float) -> float:
    """Integral of the mixture with (Q1 + a)^2 repeated, Q2 restricted to |Q2| <= half_width.

    The prefactor is the one that normalises the symmetric mixture. The second lump has
    no Q2 factor, so the result grows linearly in half_width.
    """
    if half_width <= 0:
        raise InvalidInputError("half_width must be positive", half_width=half_width)
    k = np.sqrt(params.m * params.Omega / params.hbar)
    first = 0.25 * (erf(k * (half_width - a)) + erf(k * (half_width + a)))
    second = half_width * k / np.sqrt(2.0 * np.pi)
    return float(first + second)


def correlated_mixture(params: PhysicalParams, a: float, literal: bool = False) -> CatState:
    """Two-oscillator mixture of the product lumps at (a, a) and (-a, -a)."""
    if literal:
        raise InvalidInputError(
            "mixture with (Q1 + a)^2 repeated is not normalisable over Q2", separation=a,
            norm_within_10=literal_mixture_norm(params, a, 10.0),
            norm_within_100=literal_mixture_norm(params, a, 100.0),
        )
    var_q, var_p = params.ground_variances
    cov = np.diag([var_q, var_p, var_q, var_p])
    return CatState(components=(
        CatComponent(weight=0.5, center=[a, 0.0, a, 0.0], cov=cov, wavevector=None),
        CatComponent(weight=0.5, center=[-a, 0.0, -a, 0.0], cov=cov, wavevector=None),
    ))


def entangled_gaussian(params: PhysicalParams, omega_bar: float, c: float) -> GaussianState:
    """exp(-P^2 / m Omega hbar) in both momenta, exp(-(m omega_bar / hbar) Q^2) in both
    positions, and the cross factor exp(c Q1 Q2)."""
    if omega_bar <= 0:
        raise InvalidInputError("omega_bar must be positive", omega_bar=omega_bar)
    diag = 2.0 * params.m * omega_bar / params.hbar
    if abs(c) >= diag:
        raise InvalidInputError(
            "cross coupling outside the positive-definite range", c=c, limit=diag,
        )
    cov_q = np.linalg.inv(np.array([[diag, -c], [-c, diag]]))
    var_p = params.ground_variances[1]
    cov = np.zeros((4, 4))
    cov[np.ix_([0, 2], [0, 2])] = cov_q
    cov[1, 1] = cov[3, 3] = var_p
    return GaussianState(mean=np.zeros(4), cov=cov)


def tuned_coupling(params: PhysicalParams, omega_bar: float) -> float:
    """Cross coupling that makes the entangled Gaussian globally pure."""
    if omega_bar < params.Omega:
        raise InvalidInputError(
            "a globally pure state needs omega_bar >= Omega", omega_bar=omega_bar, Omega=params.Omega,
        )
    return 2.0 * params.m / params.hbar * np.sqrt(omega_bar ** 2 - params.Omega ** 2)


def eq10_demo(params: PhysicalParams, a: float, c: Optional[float] = None,
              squeeze: float = 0.5, literal: bool = False) -> Eq10Report:
    """Correlation versus entanglement for two oscillators, measured by purity."""
    warnings = []
    if a * a < 10.0 * params.hbar / (params.m * params.Omega):
        message = f"separation a^2 = {a * a:g} is below 10 hbar / m Omega; lumps overlap"
        logger.warning(message)
        warnings.append(message)

    mixture = correlated_mixture(params, a, literal=literal)
    omega_bar = params.Omega * np.cosh(2.0 * squeeze)
    c = tuned_coupling(params, omega_bar) if c is None else float(c)
    entangled = entangled_gaussian(params, omega_bar, c)
    tmsv = two_mode_squeezed(params, squeeze)

    return Eq10Report(
        separation=a, c=c, omega_bar=omega_bar, squeeze=squeeze,
        mixture_global_purity=purity(mixture, params),
        mixture_reduced_purity=purity(mixture.marginal([0, 1]), params),
        entangled_global_purity=purity(entangled, params),
        entangled_reduced_purity=purity(entangled.marginal([0, 1]), params),
        entangled_admissible=is_quantum_admissible(entangled, params),
        squeezed_vacuum_reduced_purity=purity(tmsv.marginal([0, 1]), params),
        warnings=warnings,
    )
