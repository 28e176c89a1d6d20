"""
Physical parameters, spectral densities, inverse-temperature schedules and the
continuum kernels they define.

Internal units are m = Omega = hbar = kB = 1 unless a PhysicalParams record says
otherwise. Every continuum integral goes through ``_cosine_transform``, which runs
scipy's adaptive quad_vec over blocks of times.
"""

import enum
import logging
import dataclasses
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import quad, quad_vec
from scipy.special import gamma as gamma_fn

from qbm.config import QUAD_TOL, EXP_SPAN
from qbm.errors import (
    InvalidInputError, DivergentIntegralError, QuadratureError,
)

logger = logging.getLogger(__name__)

# A tabulated spectrum whose last value exceeds this fraction of its peak is
# treated as truncated while still carrying weight.
TAIL_FRACTION = 1e-6

# times per quad_vec call, and the phase spanned by one starting panel at the largest t
_TIME_BLOCK = 256
_PANEL_PHASE = 8.0 * np.pi


class SpectrumKind(str, enum.Enum):
    OHMIC = "ohmic"
    SUPRA_OHMIC = "supra_ohmic"
    TABULATED = "tabulated"


class CutoffShape(str, enum.Enum):
    SHARP = "sharp"
    EXPONENTIAL = "exponential"


class BetaKind(str, enum.Enum):
    CLASSICAL = "classical"   # beta = 1/kT for every mode
    QUANTUM = "quantum"       # beta = (2/hbar w) tanh(hbar w / 2kT)


@dataclass(frozen=True)
class PhysicalParams:
    m: float = 1.0
    Omega: float = 1.0
    hbar: float = 1.0
    kB: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        for name in ("m", "Omega", "hbar", "kB"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise InvalidInputError(f"{name} must be positive, got {value}", field=name)
        if not np.isfinite(self.T) or self.T < 0:
            raise InvalidInputError(f"T must be >= 0, got {self.T}", field="T")

    @property
    def kT(self) -> float:
        return self.kB * self.T

    @property
    def ground_variances(self) -> Tuple[float, float]:
        """(Var Q, Var P) of the oscillator ground state."""
        return (
            self.hbar / (2.0 * self.m * self.Omega),
            self.m * self.Omega * self.hbar / 2.0,
        )


@dataclass(frozen=True)
class SpectralModel:
    """Coupling function g_w^2 with its cutoff.

    Ohmic:       g^2 = (4 m gamma / pi) * cutoff(w)
    SupraOhmic:  g^2 = (4 m gamma / pi) (w / w_ref)^(s-1) * cutoff(w), w_ref defaults to Lambda
    Tabulated:   linear interpolation of (w, g^2) pairs, zero outside the table
    """

    kind: SpectrumKind = SpectrumKind.OHMIC
    gamma: float = 0.1
    Lambda: float = 50.0
    cutoff_shape: CutoffShape = CutoffShape.EXPONENTIAL
    exponent: float = 1.0
    omega_ref: Optional[float] = None
    table: Optional[Tuple[Tuple[float, float], ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SpectrumKind(self.kind))
        object.__setattr__(self, "cutoff_shape", CutoffShape(self.cutoff_shape))
        # gamma = 0 is the uncoupled oscillator
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise InvalidInputError(f"gamma must be >= 0, got {self.gamma}", field="gamma")
        if not np.isfinite(self.Lambda) or self.Lambda <= 0:
            raise InvalidInputError(f"Lambda must be positive, got {self.Lambda}", field="Lambda")
        if self.kind == SpectrumKind.OHMIC and self.exponent != 1.0:
            object.__setattr__(self, "exponent", 1.0)
        if self.kind == SpectrumKind.SUPRA_OHMIC and self.exponent < 1.0:
            raise InvalidInputError(
                f"supra-Ohmic exponent must be >= 1, got {self.exponent}", field="exponent"
            )
        if self.omega_ref is not None and self.omega_ref <= 0:
            raise InvalidInputError("omega_ref must be positive", field="omega_ref")
        if self.kind == SpectrumKind.TABULATED:
            if not self.table or len(self.table) < 2:
                raise InvalidInputError("tabulated spectrum needs at least two rows", field="table")
            table = np.asarray(self.table, dtype=float)
            if not np.all(np.isfinite(table)):
                raise InvalidInputError("tabulated spectrum has non-finite values", field="table")
            if np.any(np.diff(table[:, 0]) <= 0):
                raise InvalidInputError("tabulated frequencies must be strictly increasing", field="table")
            if table[0, 0] < 0 or np.any(table[:, 1] < 0):
                raise InvalidInputError("tabulated spectrum must be non-negative", field="table")
            object.__setattr__(self, "table", tuple(map(tuple, table.tolist())))

    @classmethod
    def zero(cls) -> "SpectralModel":
        return cls(kind=SpectrumKind.OHMIC, gamma=0.0)

    @classmethod
    def from_csv(cls, path: str, Lambda: float = 1.0, **kwargs) -> "SpectralModel":
        """Load a tabulated spectrum from a two-column CSV (w, g^2) with a header row."""
        with open(path) as fh:
            header = fh.readline().split(",")
        try:
            float(header[0])
        except ValueError:
            pass
        else:
            raise InvalidInputError(f"{path}: header row required", path=path)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != 2:
            raise InvalidInputError(f"{path}: expected two columns, got {data.shape[1]}", path=path)
        return cls(
            kind=SpectrumKind.TABULATED, Lambda=Lambda,
            table=tuple(map(tuple, data.tolist())), **kwargs,
        )

    @property
    def reference_frequency(self) -> float:
        return self.omega_ref if self.omega_ref is not None else self.Lambda

    @property
    def is_zero(self) -> bool:
        if self.kind == SpectrumKind.TABULATED:
            return not any(g2 > 0 for _, g2 in self.table)
        return self.gamma == 0.0

    def coupling(self, omega, m: float = 1.0):
        """g_w^2 at the given frequencies."""
        omega = np.asarray(omega, dtype=float)
        if self.kind == SpectrumKind.TABULATED:
            table = np.asarray(self.table)
            return np.interp(omega, table[:, 0], table[:, 1], left=0.0, right=0.0)

        g2 = np.full(omega.shape, 4.0 * m * self.gamma / np.pi)
        if self.exponent != 1.0:
            g2 = g2 * (np.abs(omega) / self.reference_frequency) ** (self.exponent - 1.0)
        if self.cutoff_shape == CutoffShape.SHARP:
            g2 = np.where(np.abs(omega) <= self.Lambda, g2, 0.0)
        else:
            g2 = g2 * np.exp(-np.abs(omega) / self.Lambda)
        return g2

    def support(self) -> Tuple[float, float, Tuple[float, ...]]:
        """(lower, upper, breakpoints) of the frequency integrals."""
        if self.kind == SpectrumKind.TABULATED:
            freqs = tuple(w for w, _ in self.table)
            return freqs[0], freqs[-1], freqs
        if self.cutoff_shape == CutoffShape.SHARP:
            return 0.0, self.Lambda, ()
        return 0.0, EXP_SPAN * self.Lambda, ()

    @property
    def default_omega_max(self) -> float:
        if self.kind == SpectrumKind.TABULATED:
            return self.table[-1][0]
        if self.cutoff_shape == CutoffShape.SHARP:
            return self.Lambda
        return 10.0 * self.Lambda

    def check_integrable(self):
        if self.kind != SpectrumKind.TABULATED:
            return
        values = np.asarray(self.table)[:, 1]
        peak = values.max()
        if peak > 0 and values[-1] > TAIL_FRACTION * peak:
            raise DivergentIntegralError(
                "tabulated spectrum does not decay at its last frequency",
                last_value=float(values[-1]), peak=float(peak),
            )


@dataclass(frozen=True)
class BetaSchedule:
    kind: BetaKind
    params: PhysicalParams

    def __post_init__(self):
        object.__setattr__(self, "kind", BetaKind(self.kind))

    def _require_temperature(self):
        if self.kind == BetaKind.CLASSICAL and self.params.T == 0:
            raise InvalidInputError("classical beta is undefined at T = 0", field="T")

    def inverse(self, omega):
        """1/beta_w, the mean energy per mode; finite at T = 0 for the quantum schedule."""
        self._require_temperature()
        omega = np.abs(np.asarray(omega, dtype=float))
        kT = self.params.kT
        if self.kind == BetaKind.CLASSICAL:
            return np.full(omega.shape, kT)
        half = 0.5 * self.params.hbar * omega
        if kT == 0:
            return half
        x = half / kT
        # x coth x, with its small-x series
        small = x < 1e-4
        safe = np.where(small, 1.0, x)
        xcoth = np.where(small, 1.0 + x * x / 3.0, safe / np.tanh(safe))
        return kT * xcoth

    def at(self, omega):
        return 1.0 / self.inverse(omega)

    def mode_variances(self, omega):
        """(Var q, Var p) of each bath mode in the initial Gaussian ensemble."""
        omega = np.asarray(omega, dtype=float)
        inv = self.inverse(omega)
        return inv / omega ** 2, inv


def _interior(points, lo: float, hi: float) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    return np.unique(points[(points > lo) & (points < hi)])


def _cosine_transform(integrand, lo: float, hi: float, times, breakpoints=(),
                      tol: float = QUAD_TOL, resolution: int = 1) -> np.ndarray:
    """int_lo^hi integrand(w) cos(w t) dw for every t, by scipy's vector-valued quad_vec.

    Times are handled in sorted blocks; each block starts from panels a few
    oscillations of its largest t wide, and the error is the max over the block.
    ``resolution`` multiplies the starting panels and divides the tolerance.
    """
    times = np.abs(np.atleast_1d(np.asarray(times, dtype=float)))
    if times.size == 0:
        return np.zeros(0)
    resolution = max(1, int(resolution))
    breaks = _interior(breakpoints, lo, hi)

    scale, _ = quad(lambda w: abs(float(integrand(w))), lo, hi,
                    points=breaks if breaks.size else None, limit=500)
    # absolute tolerance, floored at roundoff of the integrand's total weight
    target = max(tol, 1e-12 * scale) / resolution

    out = np.empty(times.shape)
    order = np.argsort(times)
    for start in range(0, times.size, _TIME_BLOCK):
        idx = order[start:start + _TIME_BLOCK]
        block = times[idx]
        n_panels = max(8, int(np.ceil((hi - lo) * block[-1] / _PANEL_PHASE))) * resolution
        points = np.union1d(np.linspace(lo, hi, n_panels + 1)[1:-1], breaks)
        values, error, info = quad_vec(
            lambda w: integrand(w) * np.cos(w * block), lo, hi,
            epsabs=target, epsrel=1e-12, norm="max", points=points,
            limit=max(10_000, 4 * (points.size + 1)), full_output=True,
        )
        if not info.success:
            raise QuadratureError(
                f"cosine transform did not converge: {info.message}",
                error=float(error), target=target, t_max=float(block[-1]),
            )
        out[idx] = values
    return out


def _shape_like(t, values):
    return float(values[0]) if np.ndim(t) == 0 else values.reshape(np.shape(t))


def kernel_at(model: SpectralModel, params: PhysicalParams, t, resolution: int = 1,
              tol: float = QUAD_TOL):
    """K(t) = (1/m) int_0^inf g_w^2 cos(w t) dw by quadrature."""
    if model.is_zero:
        return _shape_like(t, np.zeros(np.size(t)))
    model.check_integrable()
    lo, hi, breaks = model.support()
    values = _cosine_transform(
        lambda w: model.coupling(w, params.m), lo, hi, np.ravel(t), breaks,
        tol=tol, resolution=resolution,
    )
    return _shape_like(t, values / params.m)


def noise_correlation_at(model: SpectralModel, beta: BetaSchedule, t, resolution: int = 1,
                         tol: float = QUAD_TOL):
    """nu(t) = int_0^inf (g_w^2 / beta_w) cos(w t) dw, the two-point function of the bath force."""
    beta._require_temperature()
    if model.is_zero:
        return _shape_like(t, np.zeros(np.size(t)))
    model.check_integrable()
    m = beta.params.m
    lo, hi, breaks = model.support()
    values = _cosine_transform(
        lambda w: model.coupling(w, m) * beta.inverse(w), lo, hi, np.ravel(t), breaks,
        tol=tol, resolution=resolution,
    )
    return _shape_like(t, values)


def has_analytic_kernel(model: SpectralModel) -> bool:
    if model.kind == SpectrumKind.TABULATED:
        return False
    if model.cutoff_shape == CutoffShape.EXPONENTIAL:
        return True
    return model.exponent == 1.0


def analytic_kernel(model: SpectralModel, params: PhysicalParams, t):
    """Closed-form K(t) for the Ohmic-sharp and exponential-cutoff models."""
    if not has_analytic_kernel(model):
        raise InvalidInputError(
            "no closed form for this spectral model", kind=model.kind.value,
            cutoff=model.cutoff_shape.value,
        )
    t_arr = np.abs(np.atleast_1d(np.asarray(t, dtype=float)))
    pref = 4.0 * model.gamma / np.pi
    if model.cutoff_shape == CutoffShape.SHARP:
        lam_t = model.Lambda * t_arr
        # sin(Lambda t)/t = Lambda * sinc(Lambda t / pi)
        values = pref * model.Lambda * np.sinc(lam_t / np.pi)
    else:
        s = model.exponent
        z = (1.0 / model.Lambda - 1j * t_arr) ** (-s)
        values = pref * model.reference_frequency ** (1.0 - s) * gamma_fn(s) * z.real
        if s == 1.0:
            values = pref * model.Lambda / (1.0 + (model.Lambda * t_arr) ** 2)
    return _shape_like(t, values)


@dataclass(frozen=True)
class MemoryKernel:
    """K(t) evaluator. Closed forms where they exist, quadrature otherwise."""

    model: SpectralModel
    params: PhysicalParams
    resolution: int = 1
    tol: float = QUAD_TOL

    def series(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if self.model.is_zero:
            return np.zeros(times.shape)
        if has_analytic_kernel(self.model):
            return np.asarray(analytic_kernel(self.model, self.params, times), dtype=float)
        return np.asarray(
            kernel_at(self.model, self.params, times, self.resolution, self.tol), dtype=float
        )

    def at(self, t) -> float:
        return float(self.series(np.array([t]))[0])

    @property
    def zero(self) -> float:
        return self.at(0.0)

    @property
    def markovian_damping(self) -> float:
        """Half the one-sided integral of K, i.e. (pi / 4m) g^2 at w -> 0+."""
        return float(np.pi / (4.0 * self.params.m) * self.model.coupling(1e-12, self.params.m))


def renormalized_mass(model: SpectralModel, params: Optional[PhysicalParams] = None) -> float:
    """Adiabatic dragging mass Delta m = int_0^inf g_w^2 / w^2 dw."""
    params = params or PhysicalParams()
    if model.is_zero:
        return 0.0

    if model.kind == SpectrumKind.TABULATED:
        model.check_integrable()
        table = np.asarray(model.table)
        # linear interpolation from w = 0 leaves at least a 1/w singularity
        if table[0, 0] == 0.0 and (table[0, 1] > 0 or table[1, 1] > 0):
            raise DivergentIntegralError(
                "g^2 / w^2 is not integrable at w = 0",
                g2_at_zero=float(table[0, 1]), g2_next=float(table[1, 1]),
            )
        lo, hi, breaks = model.support()
        value = _cosine_transform(
            lambda w: model.coupling(w, params.m) / w ** 2, lo, hi, [0.0], breaks,
        )
        return float(value[0])

    s = model.exponent
    if s <= 2.0:
        raise DivergentIntegralError(
            "g^2 / w^2 diverges at w = 0 for exponents s <= 2",
            kind=model.kind.value, exponent=s,
        )
    pref = 4.0 * params.m * model.gamma / np.pi * model.reference_frequency ** (1.0 - s)
    if model.cutoff_shape == CutoffShape.SHARP:
        return float(pref * model.Lambda ** (s - 2.0) / (s - 2.0))
    return float(pref * gamma_fn(s - 2.0) * model.Lambda ** (s - 2.0))


def matched_reference(model: SpectralModel, omega_ref: float) -> SpectralModel:
    """Supra-Ohmic model whose g^2 equals the Ohmic value (same gamma) at omega_ref."""
    return dataclasses.replace(model, omega_ref=omega_ref)


def mass_for_ratio(model: SpectralModel, target_dm: float, params: Optional[PhysicalParams] = None) -> SpectralModel:
    """Rescale gamma so that renormalized_mass(model) equals target_dm."""
    current = renormalized_mass(model, params)
    if current == 0:
        raise InvalidInputError("cannot rescale a zero spectrum")
    return dataclasses.replace(model, gamma=model.gamma * target_dm / current)
