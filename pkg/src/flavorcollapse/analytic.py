"""Closed-form observables and inverse estimators.

Transition probabilities for lifetime and flavor states in standard
quantum mechanics and under the two position-coupled collapse models,
their asymmetry observables, the absolute-mass quadratic, and
collapse-rate estimates and lower bounds.

Every probability accepts a scalar time or an array of times; pure
functions throughout, safe for concurrent grid evaluation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import (
    Convention,
    CollapseParams,
    FlavorTarget,
    MesonParams,
    Model,
    TimeSeries,
    mass_ratios,
)
from .errors import (
    DegenerateDenominator,
    DegenerateWidths,
    InvalidParams,
    NegativeTime,
    NoRealRoot,
    SingularTime,
    SymmetricNoise,
)

__all__ = [
    "DynamicsModel",
    "AsymmetrySpec",
    "prob_lifetime_qm",
    "prob_flavor_qm",
    "prob_lifetime_qmupl",
    "prob_flavor_qmupl",
    "prob_lifetime_csl",
    "prob_flavor_csl",
    "asymmetry",
    "asymmetry_closed_form",
    "MassSolutions",
    "solve_absolute_masses",
    "collapse_rate_estimate",
    "collapse_rate_lower_bound",
    "bound_curve",
    "GRW_COLLAPSE_RATE",
    "ADLER_COLLAPSE_RATE",
    "ADLER_COLLAPSE_RATE_BAND",
    "ADLER_COHERENCE_LENGTH",
]

# Reference collapse-rate values overlaid on bound plots, in 1/s:
# the historical GRW proposal and Adler's value with its two-decade band,
# quoted at coherence length 1e-7 m.
GRW_COLLAPSE_RATE = 1e-16
ADLER_COLLAPSE_RATE = 1e-8
ADLER_COLLAPSE_RATE_BAND = (1e-10, 1e-6)
ADLER_COHERENCE_LENGTH = 1e-7


class DynamicsModel(enum.Enum):
    """Which dynamics generates the observables."""

    QM = "QM"
    QMUPL = "QMUPL"
    CSL = "CSL"


@dataclass(frozen=True)
class AsymmetrySpec:
    """Model selection plus the parameters the asymmetry needs."""

    model: DynamicsModel
    meson: MesonParams
    collapse: CollapseParams | None = None

    def __post_init__(self) -> None:
        if self.model is DynamicsModel.QM:
            if self.collapse is not None:
                raise InvalidParams("QM asymmetry takes no collapse parameters")
        else:
            if self.collapse is None:
                raise InvalidParams(f"{self.model.value} asymmetry requires collapse parameters")
            expected = Model.QMUPL if self.model is DynamicsModel.QMUPL else Model.CSL
            if self.collapse.model is not expected:
                raise InvalidParams("collapse.model disagrees with the asymmetry model")


def _times(t) -> tuple[np.ndarray, bool]:
    arr = np.asarray(t, dtype=float)
    scalar = arr.ndim == 0
    if np.any(arr < 0.0):
        raise NegativeTime("probabilities are defined for t >= 0")
    return np.atleast_1d(arr), scalar


def _out(values: np.ndarray, scalar: bool):
    return float(values[0]) if scalar else values


def _check_eigenstate(i: int) -> None:
    if i not in (0, 1):
        raise InvalidParams("eigenstate index must be 0 (L) or 1 (H)")


def _ratio_terms(meson: MesonParams, collapse: CollapseParams):
    """Effective rate and the mass-ratio combinations the formulas use."""
    ratios = mass_ratios(meson, collapse)
    sum_sq = float(ratios[0] ** 2 + ratios[1] ** 2)
    diff_sq = float((ratios[1] - ratios[0]) ** 2)       # (delta m~)^2
    sq_diff = float(ratios[1] ** 2 - ratios[0] ** 2)    # delta(m~^2), signed
    return collapse.effective_rate, ratios, sum_sq, diff_sq, sq_diff


def _check_model(collapse: CollapseParams, expected: Model) -> None:
    if collapse.model is not expected:
        raise InvalidParams(f"collapse parameters are for {collapse.model.value}, expected {expected.value}")


def prob_lifetime_qm(meson: MesonParams, i: int, j: int, t):
    """Survival probability exp(-gamma_i t) of lifetime eigenstate i."""
    _check_eigenstate(i)
    _check_eigenstate(j)
    tt, scalar = _times(t)
    if i != j:
        return _out(np.zeros_like(tt), scalar)
    return _out(np.exp(-meson.widths[i] * tt), scalar)


def prob_flavor_qm(meson: MesonParams, target: FlavorTarget, t):
    """Flavor transition probability from M0 under Wigner-Weisskopf dynamics."""
    tt, scalar = _times(t)
    sign = 1.0 if target is FlavorTarget.M0 else -1.0
    diag = np.exp(-meson.gamma_L * tt) + np.exp(-meson.gamma_H * tt)
    interference = 2.0 * np.exp(-meson.gamma_bar * tt) * np.cos(tt * meson.delta_m)
    return _out(0.25 * (diag + sign * interference), scalar)


def _qmupl_base(lam: float, beta: float, coeff: float, tt: np.ndarray, what: str) -> np.ndarray:
    base = 1.0 - lam * (1.0 - 2.0 * beta) * coeff * tt
    if np.any(base <= 0.0):
        t_star = 1.0 / (lam * (1.0 - 2.0 * beta) * coeff)
        raise SingularTime(f"{what} factor singular at t* = {t_star:g}; requested t reaches it")
    return base


def prob_lifetime_qmupl(meson: MesonParams, collapse: CollapseParams, i: int, j: int, t):
    """Algebraic survival probability of lifetime eigenstate i under QMUPL."""
    _check_model(collapse, Model.QMUPL)
    _check_eigenstate(i)
    _check_eigenstate(j)
    tt, scalar = _times(t)
    if i != j:
        return _out(np.zeros_like(tt), scalar)
    lam, ratios, _, _, _ = _ratio_terms(meson, collapse)
    base = _qmupl_base(lam, collapse.beta, float(ratios[i] ** 2), tt, "lifetime")
    return _out(base ** (-0.5 * collapse.d), scalar)


def prob_flavor_qmupl(meson: MesonParams, collapse: CollapseParams, target: FlavorTarget, t):
    """Flavor transition probability from M0 under QMUPL (algebraic damping)."""
    _check_model(collapse, Model.QMUPL)
    tt, scalar = _times(t)
    lam, ratios, sum_sq, diff_sq, _ = _ratio_terms(meson, collapse)
    beta, d = collapse.beta, collapse.d
    sign = 1.0 if target is FlavorTarget.M0 else -1.0
    base_l = _qmupl_base(lam, beta, float(ratios[0] ** 2), tt, "lifetime")
    base_h = _qmupl_base(lam, beta, float(ratios[1] ** 2), tt, "lifetime")
    base_int = 1.0 - 0.5 * lam * ((1.0 - 2.0 * beta) * sum_sq - diff_sq) * tt
    if np.any(base_int <= 0.0):
        raise SingularTime("interference factor singular; requested t reaches its domain edge")
    diag = base_l ** (-0.5 * d) + base_h ** (-0.5 * d)
    interference = 2.0 * np.cos(tt * meson.delta_m) / base_int ** (0.5 * d)
    return _out(0.25 * (diag + sign * interference), scalar)


def prob_lifetime_csl(meson: MesonParams, collapse: CollapseParams, i: int, j: int, t):
    """Exponential survival probability of lifetime eigenstate i under CSL."""
    _check_model(collapse, Model.CSL)
    _check_eigenstate(i)
    _check_eigenstate(j)
    tt, scalar = _times(t)
    if i != j:
        return _out(np.zeros_like(tt), scalar)
    lam, ratios, _, _, _ = _ratio_terms(meson, collapse)
    rate = lam * (2.0 * collapse.beta - 1.0) * float(ratios[i] ** 2)
    return _out(np.exp(-rate * tt), scalar)


def prob_flavor_csl(meson: MesonParams, collapse: CollapseParams, target: FlavorTarget, t):
    """Flavor transition probability from M0 under CSL (exponential damping)."""
    _check_model(collapse, Model.CSL)
    tt, scalar = _times(t)
    lam, ratios, sum_sq, diff_sq, _ = _ratio_terms(meson, collapse)
    two_beta_m1 = 2.0 * collapse.beta - 1.0
    sign = 1.0 if target is FlavorTarget.M0 else -1.0
    diag = np.exp(-lam * two_beta_m1 * float(ratios[0] ** 2) * tt) + np.exp(
        -lam * two_beta_m1 * float(ratios[1] ** 2) * tt
    )
    interference = (
        2.0
        * np.exp(-0.5 * lam * (two_beta_m1 * sum_sq + diff_sq) * tt)
        * np.cos(tt * meson.delta_m)
    )
    return _out(0.25 * (diag + sign * interference), scalar)


def _flavor_pair(spec: AsymmetrySpec, tt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if spec.model is DynamicsModel.QM:
        return (
            prob_flavor_qm(spec.meson, FlavorTarget.M0, tt),
            prob_flavor_qm(spec.meson, FlavorTarget.M0BAR, tt),
        )
    if spec.model is DynamicsModel.QMUPL:
        return (
            prob_flavor_qmupl(spec.meson, spec.collapse, FlavorTarget.M0, tt),
            prob_flavor_qmupl(spec.meson, spec.collapse, FlavorTarget.M0BAR, tt),
        )
    return (
        prob_flavor_csl(spec.meson, spec.collapse, FlavorTarget.M0, tt),
        prob_flavor_csl(spec.meson, spec.collapse, FlavorTarget.M0BAR, tt),
    )


def asymmetry(spec: AsymmetrySpec, t):
    """Normalized difference of same-flavor and flipped-flavor probabilities."""
    tt, scalar = _times(t)
    p_same, p_flip = _flavor_pair(spec, tt)
    denom = p_same + p_flip
    if np.any(~np.isfinite(denom)) or np.any(denom <= 0.0):
        raise DegenerateDenominator("flavor probabilities sum to zero; asymmetry undefined")
    return _out((p_same - p_flip) / denom, scalar)


def asymmetry_closed_form(spec: AsymmetrySpec, t):
    """The model's closed-form asymmetry, algebraically equal to the ratio."""
    tt, scalar = _times(t)
    meson = spec.meson
    osc = np.cos(tt * meson.delta_m)
    if spec.model is DynamicsModel.QM:
        return _out(osc / np.cosh(0.5 * meson.delta_gamma * tt), scalar)

    lam, ratios, _, diff_sq, sq_diff = _ratio_terms(meson, spec.collapse)
    beta, d = spec.collapse.beta, spec.collapse.d
    if spec.model is DynamicsModel.CSL:
        damping = np.exp(-0.5 * lam * diff_sq * tt)
        return _out(osc * damping / np.cosh(lam * (beta - 0.5) * sq_diff * tt), scalar)

    base_l = _qmupl_base(lam, beta, float(ratios[0] ** 2), tt, "lifetime")
    base_h = _qmupl_base(lam, beta, float(ratios[1] ** 2), tt, "lifetime")
    first = (1.0 - 0.5 * lam * ((1.0 - 2.0 * beta) * sq_diff - diff_sq) * tt / base_l) ** (0.5 * d)
    second = (1.0 + 0.5 * lam * ((1.0 - 2.0 * beta) * sq_diff + diff_sq) * tt / base_h) ** (0.5 * d)
    return _out(2.0 * osc / (first + second), scalar)


@dataclass(frozen=True)
class MassSolutions:
    """Roots of the absolute-mass quadratic.

    ``roots`` lists every real root for m_L in ascending order, unfiltered;
    ``physical`` keeps the positive ones, paired with m_H = m_L + delta_m.
    """

    roots: tuple[float, ...]
    physical: tuple[tuple[float, float], ...]


def solve_absolute_masses(
    delta_gamma: float, gamma_bar: float, delta_m: float, convention: Convention
) -> MassSolutions:
    """Solve the quadratic linking widths and mass splitting to m_L.

    2*dG/(dG +- 2*Gbar) * m_L^2 + 2*dm * m_L + dm^2 = 0, upper sign for
    the normal mass-ratio convention, lower sign for the inverted one.
    """
    if not (delta_m > 0.0):
        raise InvalidParams("delta_m must be positive")
    denom = delta_gamma + 2.0 * gamma_bar if convention is Convention.NORMAL else delta_gamma - 2.0 * gamma_bar
    if denom == 0.0:
        raise DegenerateDenominator("mass quadratic denominator vanishes for this convention")

    a = 2.0 * delta_gamma / denom
    b = 2.0 * delta_m
    c = delta_m**2
    if a == 0.0:
        roots = (-0.5 * delta_m,)
    else:
        disc = b * b - 4.0 * a * c
        if disc < 0.0:
            raise NoRealRoot("mass quadratic has no real root")
        q = -0.5 * (b + math.sqrt(disc))  # b > 0, so q < 0 and both divisions are stable
        roots = tuple(sorted((q / a, c / q)))
    physical = tuple((r, r + delta_m) for r in roots if r > 0.0)
    return MassSolutions(roots=roots, physical=physical)


def collapse_rate_estimate(gamma_i: float, beta: float, m_ratio_i: float) -> float:
    """Effective collapse rate gamma_i / ((2 beta - 1) m~_i^2)."""
    if beta == 0.5:
        raise SymmetricNoise("beta = 1/2: symmetric noise induces no decay, no estimate exists")
    if beta < 0.5:
        raise InvalidParams("beta must exceed 1/2 for a nonnegative rate estimate")
    if not (m_ratio_i > 0.0):
        raise InvalidParams("mass ratio must be positive")
    if gamma_i < 0.0:
        raise InvalidParams("decay width must be nonnegative")
    return gamma_i / ((2.0 * beta - 1.0) * m_ratio_i**2)


def collapse_rate_lower_bound(meson: MesonParams, m0: float, convention: Convention) -> float:
    """Lower bound on the effective collapse rate from measured widths.

    (delta_m / (m0 (sqrt(gamma_L^{+-1}) - sqrt(gamma_H^{+-1}))))^{-+2},
    upper signs for the normal convention, lower for the inverted one.
    Equals the rate estimate at beta = 1 evaluated on the mass solution
    of the quadratic above.
    """
    if not (m0 > 0.0):
        raise InvalidParams("m0 must be positive")
    g_l, g_h = meson.gamma_L, meson.gamma_H
    if g_l == g_h:
        raise DegenerateWidths("equal decay widths leave the bound undefined")
    if convention is Convention.NORMAL:
        gap = math.sqrt(g_l) - math.sqrt(g_h)
        return (m0 * gap / meson.delta_m) ** 2
    if g_l == 0.0 or g_h == 0.0:
        raise DegenerateWidths("inverted convention requires strictly positive widths")
    gap = math.sqrt(1.0 / g_l) - math.sqrt(1.0 / g_h)
    return (meson.delta_m / (m0 * gap)) ** 2


def bound_curve(
    meson: MesonParams, m0_range: tuple[float, float], convention: Convention, n_points: int
) -> TimeSeries:
    """Collapse-rate lower bound sampled log-uniformly over a reference-mass range."""
    lo, hi = m0_range
    if not (0.0 < lo < hi):
        raise InvalidParams("m0_range must be positive and increasing")
    if n_points < 2:
        raise InvalidParams("n_points must be at least 2")
    m0s = np.logspace(math.log10(lo), math.log10(hi), n_points)
    bounds = np.array([collapse_rate_lower_bound(meson, m0, convention) for m0 in m0s])
    return TimeSeries(times=m0s, values=bounds, labels=("lambda_lower_bound",))
