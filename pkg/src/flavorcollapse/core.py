"""Domain types, parameter validation and basis conventions.

All quantities live in natural units (hbar = c = 1): masses and decay
widths share the unit of inverse time.  Unit conversion from SI inputs
is owned entirely by the CLI layer.

Conventions fixed here and used project-wide:

* eigenstate ordering (L, H) = (index 0, index 1);
* flavor ordering (M0, M0bar) = (index 0, index 1);
* the flavor/mass mixing matrix is the real symmetric involution
  U = [[1, 1], [1, -1]] / sqrt(2), i.e. the same matrix maps mass
  coordinates to flavor coordinates and back.

Every type in this module is an immutable value after construction and
safe to share across concurrent workers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParams

__all__ = [
    "L",
    "H",
    "Basis",
    "Convention",
    "Model",
    "FlavorTarget",
    "MesonParams",
    "CollapseParams",
    "QuantumState",
    "DensityMatrix",
    "TimeSeries",
    "EnsembleStats",
    "validate_params",
    "mass_ratio",
    "mass_ratios",
    "flavor_mass_basis_change",
    "to_mass",
    "to_flavor",
    "to_flavor_matrix",
    "to_mass_matrix",
]

# Eigenstate indices, fixed project-wide.
L = 0
H = 1


class Basis(enum.Enum):
    FLAVOR = "flavor"
    MASS = "mass"
    ENLARGED = "enlarged"


class Convention(enum.Enum):
    """Mass-ratio convention: m_i/m0 (normal) or m0/m_i (inverted)."""

    NORMAL = "normal"
    INVERTED = "inverted"


class Model(enum.Enum):
    QMUPL = "QMUPL"
    CSL = "CSL"


class FlavorTarget(enum.Enum):
    """Flavor transition target: the particle or the antiparticle state."""

    M0 = "M0"
    M0BAR = "M0bar"


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise InvalidParams(message)


@dataclass(frozen=True)
class MesonParams:
    """Masses and decay widths of the two lifetime eigenstates.

    Parameters are in natural units (inverse time).  Invariants:
    m_H > m_L >= 0 and both widths nonnegative.
    """

    m_L: float
    m_H: float
    gamma_L: float
    gamma_H: float

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> "MesonParams":
        _require(math.isfinite(self.m_L) and math.isfinite(self.m_H), "masses must be finite")
        _require(self.m_L >= 0.0, "m_L must be nonnegative")
        _require(self.m_H > self.m_L, "delta_m must be positive")
        _require(
            math.isfinite(self.gamma_L) and math.isfinite(self.gamma_H),
            "widths must be finite",
        )
        _require(self.gamma_L >= 0.0, "gamma_L must be nonnegative")
        _require(self.gamma_H >= 0.0, "gamma_H must be nonnegative")
        return self

    @property
    def masses(self) -> np.ndarray:
        return np.array([self.m_L, self.m_H])

    @property
    def widths(self) -> np.ndarray:
        return np.array([self.gamma_L, self.gamma_H])

    @property
    def delta_m(self) -> float:
        return self.m_H - self.m_L

    @property
    def delta_gamma(self) -> float:
        return self.gamma_L - self.gamma_H

    @property
    def gamma_bar(self) -> float:
        return 0.5 * (self.gamma_L + self.gamma_H)


_SQRT_4PI = math.sqrt(4.0 * math.pi)


@dataclass(frozen=True)
class CollapseParams:
    """Collapse-model selection and constants.

    ``rate`` is the model's own coupling: lambda_Q (1/(m^2 s)) for QMUPL,
    gamma (m^d/s) for CSL.  ``alpha`` is the squared width of the initial
    Gaussian wave packet, psi(x) = (pi*alpha)^(-d/4) exp(-x^2/(2*alpha)),
    so the position density has variance alpha/2 per axis.  ``m0`` is the
    reference mass of the mass-ratio coupling; it is a free parameter of
    the model and is never defaulted.
    """

    model: Model
    rate: float
    beta: float
    m0: float
    alpha: float
    d: int = 3
    r_C: float | None = None
    ratio_convention: Convention = Convention.NORMAL

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> "CollapseParams":
        _require(isinstance(self.model, Model), "model must be a Model enum member")
        _require(isinstance(self.ratio_convention, Convention), "ratio_convention must be a Convention")
        _require(math.isfinite(self.rate) and self.rate >= 0.0, "rate must be nonnegative")
        _require(0.0 <= self.beta <= 1.0, "beta out of [0,1]")
        _require(math.isfinite(self.m0) and self.m0 > 0.0, "m0 must be positive")
        _require(math.isfinite(self.alpha) and self.alpha > 0.0, "alpha must be positive")
        _require(self.d in (1, 2, 3), "d must be 1, 2 or 3")
        if self.model is Model.CSL:
            _require(
                self.r_C is not None and math.isfinite(self.r_C) and self.r_C > 0.0,
                "r_C must be positive for CSL",
            )
        return self

    @property
    def effective_rate(self) -> float:
        """Rate entering the observables, in inverse time.

        QMUPL: lambda_Q * alpha; CSL: gamma / (sqrt(4 pi) r_C)^d.
        """
        if self.model is Model.QMUPL:
            return self.rate * self.alpha
        return self.rate / (_SQRT_4PI * self.r_C) ** self.d


def validate_params(meson: MesonParams, collapse: CollapseParams) -> tuple[MesonParams, CollapseParams]:
    """Re-check every invariant; return the pair unchanged if all hold."""
    return meson.validate(), collapse.validate()


def mass_ratio(meson: MesonParams, collapse: CollapseParams, i: int) -> float:
    """Dimensionless coupling of eigenstate ``i`` (0 = L, 1 = H)."""
    if i not in (L, H):
        raise InvalidParams("eigenstate index must be 0 (L) or 1 (H)")
    m_i = meson.masses[i]
    if collapse.ratio_convention is Convention.NORMAL:
        return m_i / collapse.m0
    if m_i == 0.0:
        raise InvalidParams("inverted mass ratio undefined for massless eigenstate")
    return collapse.m0 / m_i


def mass_ratios(meson: MesonParams, collapse: CollapseParams) -> np.ndarray:
    """Both mass ratios as an array ordered (L, H)."""
    return np.array([mass_ratio(meson, collapse, L), mass_ratio(meson, collapse, H)])


_DIM_FOR_BASIS = {Basis.FLAVOR: 2, Basis.MASS: 2, Basis.ENLARGED: 4}


@dataclass(frozen=True)
class QuantumState:
    """Complex amplitude vector tagged by its basis.

    The norm is not constrained: decay dynamics shrinks it, and the
    linear collapse equations carry the decay information in the norm.
    """

    amplitudes: np.ndarray
    basis: Basis

    def __post_init__(self) -> None:
        amps = np.asarray(self.amplitudes, dtype=complex)
        object.__setattr__(self, "amplitudes", amps)
        amps.setflags(write=False)
        if amps.ndim != 1 or amps.shape[0] != _DIM_FOR_BASIS[self.basis]:
            raise InvalidParams(
                f"state in basis {self.basis.value} must have length {_DIM_FOR_BASIS[self.basis]}"
            )

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    @staticmethod
    def m0() -> "QuantumState":
        return QuantumState(np.array([1.0, 0.0]), Basis.FLAVOR)

    @staticmethod
    def m0bar() -> "QuantumState":
        return QuantumState(np.array([0.0, 1.0]), Basis.FLAVOR)

    @staticmethod
    def mass_eigenstate(i: int) -> "QuantumState":
        amps = np.zeros(2)
        amps[i] = 1.0
        return QuantumState(amps, Basis.MASS)


def flavor_mass_basis_change() -> np.ndarray:
    """The 2x2 unitary mapping mass-basis coordinates to flavor-basis ones.

    Real, symmetric and involutory (U = U^T = U^-1), so the same matrix
    performs the inverse map.  Orderings: mass (L, H), flavor (M0, M0bar).
    """
    return np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2.0)


_U = flavor_mass_basis_change()


def to_mass(state: QuantumState) -> QuantumState:
    if state.basis is Basis.MASS:
        return state
    if state.basis is not Basis.FLAVOR:
        raise InvalidParams("basis change defined on the 2-dim flavor/mass space only")
    return QuantumState(_U @ state.amplitudes, Basis.MASS)


def to_flavor(state: QuantumState) -> QuantumState:
    if state.basis is Basis.FLAVOR:
        return state
    if state.basis is not Basis.MASS:
        raise InvalidParams("basis change defined on the 2-dim flavor/mass space only")
    return QuantumState(_U @ state.amplitudes, Basis.FLAVOR)


def to_flavor_matrix(matrix_mass: np.ndarray) -> np.ndarray:
    """Conjugate a mass-basis 2x2 operator into the flavor basis."""
    return _U @ matrix_mass @ _U


def to_mass_matrix(matrix_flavor: np.ndarray) -> np.ndarray:
    """Conjugate a flavor-basis 2x2 operator into the mass basis."""
    return _U @ matrix_flavor @ _U


_HERM_TOL = 1e-12
_EIG_TOL = -1e-10
_TRACE_TOL = 1e-10


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian positive-semidefinite matrix with trace at most one."""

    matrix: np.ndarray
    basis: Basis

    def __post_init__(self) -> None:
        mat = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", mat)
        mat.setflags(write=False)
        dim = _DIM_FOR_BASIS[self.basis]
        if mat.shape != (dim, dim):
            raise InvalidParams(f"density matrix in basis {self.basis.value} must be {dim}x{dim}")
        scale = max(np.linalg.norm(mat), 1e-300)
        if np.linalg.norm(mat - mat.conj().T) > _HERM_TOL * scale:
            raise InvalidParams("density matrix not Hermitian within tolerance")
        eigs = np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))
        if eigs.min() < _EIG_TOL:
            raise InvalidParams("density matrix has a negative eigenvalue beyond tolerance")
        if mat.trace().real > 1.0 + _TRACE_TOL:
            raise InvalidParams("density matrix trace exceeds one")

    @property
    def trace(self) -> float:
        return float(self.matrix.trace().real)

    @classmethod
    def from_states(cls, states: list[QuantumState], weights: np.ndarray | None = None) -> "DensityMatrix":
        """Ensemble average of projectors E[|psi><psi|] over the given states."""
        if not states:
            raise InvalidParams("need at least one state")
        basis = states[0].basis
        if any(s.basis is not basis for s in states):
            raise InvalidParams("all states must share one basis")
        amps = np.stack([s.amplitudes for s in states])
        if weights is None:
            weights = np.full(len(states), 1.0 / len(states))
        weights = np.asarray(weights, dtype=float)
        mat = np.einsum("b,bi,bj->ij", weights, amps, amps.conj())
        return cls(mat, basis)


@dataclass(frozen=True)
class TimeSeries:
    """Strictly increasing time grid with one column per observable."""

    times: np.ndarray
    values: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", tuple(self.labels))
        times.setflags(write=False)
        values.setflags(write=False)
        if times.ndim != 1 or len(times) != values.shape[0]:
            raise InvalidParams("times and values must have matching length")
        if len(times) > 1 and not np.all(np.diff(times) > 0.0):
            raise InvalidParams("times must be strictly increasing")
        if values.shape[1] != len(self.labels):
            raise InvalidParams("one label per value column required")


@dataclass(frozen=True)
class EnsembleStats:
    """Per-time ensemble means and standard errors over trajectories.

    ``mean_matrices`` holds the raw ensemble-mean projector E[|psi><psi|]
    (unnormalized) at every grid time; ``covariances`` the per-time sample
    covariance of the scalar observables, used for error propagation.
    """

    times: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray
    labels: tuple[str, ...]
    n_trajectories: int
    seed: int
    mean_matrices: np.ndarray | None = None
    covariances: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.n_trajectories < 1:
            raise InvalidParams("n_trajectories must be at least 1")
        if np.any(np.asarray(self.stderrs) < 0.0):
            raise InvalidParams("standard errors must be nonnegative")
        if np.asarray(self.means).shape != np.asarray(self.stderrs).shape:
            raise InvalidParams("means and stderrs must have identical shape")

    def column(self, label: str) -> tuple[np.ndarray, np.ndarray]:
        k = self.labels.index(label)
        return self.means[:, k], self.stderrs[:, k]
