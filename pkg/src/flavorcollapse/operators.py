"""Operator constructors on the 2-dim flavor space and the 4-dim enlarged space.

All matrices are returned in the mass basis by default, where every
Hermitian operator of the model is diagonal.  The enlarged space is
ordered (M_L, M_H, f_L, f_H): the first block is the flavor sector in
mass coordinates, the second the orthonormal decay-product states.

Pure functions over immutable inputs; safe to call concurrently.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .core import Basis, CollapseParams, MesonParams, mass_ratios, to_flavor_matrix
from .errors import InvalidParams, NegativeWidth, ZeroRate

__all__ = [
    "mass_operator",
    "decay_operator",
    "effective_hamiltonian",
    "collapse_operator_A",
    "collapse_operator_B",
    "lindblad_decay_operator",
    "EnlargedOperators",
    "enlarged_operators",
    "induced_decay_widths",
]


def _in_basis(diag_mass: np.ndarray, basis: Basis) -> np.ndarray:
    mat = np.diag(diag_mass)
    if basis is Basis.MASS:
        return mat
    if basis is Basis.FLAVOR:
        return to_flavor_matrix(mat)
    raise InvalidParams("2x2 operators exist in the mass or flavor basis only")


def mass_operator(meson: MesonParams, basis: Basis = Basis.MASS) -> np.ndarray:
    """Hermitian mass operator, diag(m_L, m_H) in the mass basis."""
    return _in_basis(meson.masses.astype(float), basis)


def decay_operator(meson: MesonParams, basis: Basis = Basis.MASS) -> np.ndarray:
    """Hermitian PSD decay operator, diag(gamma_L, gamma_H) in the mass basis."""
    return _in_basis(meson.widths.astype(float), basis)


def effective_hamiltonian(meson: MesonParams, basis: Basis = Basis.MASS) -> np.ndarray:
    """Non-Hermitian Wigner-Weisskopf generator M - (i/2) Gamma."""
    return mass_operator(meson, basis).astype(complex) - 0.5j * decay_operator(meson, basis)


def collapse_operator_A(
    meson: MesonParams, collapse: CollapseParams, basis: Basis = Basis.MASS
) -> np.ndarray:
    """Self-adjoint collapse operator diag(m~_L, m~_H) in the mass basis.

    The mass ratios follow the configured convention (normal or inverted).
    """
    return _in_basis(mass_ratios(meson, collapse), basis)


def collapse_operator_B(meson: MesonParams, collapse: CollapseParams) -> np.ndarray:
    """Decay-triggering map diag(sqrt(gamma_i / lambda_eff)).

    Rows index the decay states (f_L, f_H), columns the mass eigenstates,
    so B^dag B = Gamma / lambda_eff on the flavor sector.
    """
    lam = collapse.effective_rate
    widths = meson.widths
    if lam == 0.0:
        if np.any(widths > 0.0):
            raise ZeroRate("collapse_operator_B undefined: zero effective rate with nonzero widths")
        return np.zeros((2, 2))
    return np.diag(np.sqrt(widths / lam))


def lindblad_decay_operator(meson: MesonParams) -> np.ndarray:
    """Decay Lindblad block diag(sqrt(gamma_L), sqrt(gamma_H)).

    Rows index the decay states, columns the mass eigenstates; its
    adjoint square reproduces the decay operator exactly.
    """
    return np.diag(np.sqrt(meson.widths))


class EnlargedOperators(NamedTuple):
    """Block operators on the 4-dim space ordered (M_L, M_H, f_L, f_H)."""

    hamiltonian: np.ndarray
    collapse_a: np.ndarray
    collapse_b: np.ndarray
    lindblad_decay: np.ndarray


def _upper_block(block: np.ndarray) -> np.ndarray:
    out = np.zeros((4, 4), dtype=block.dtype)
    out[:2, :2] = block
    return out


def _lower_left_block(block: np.ndarray) -> np.ndarray:
    out = np.zeros((4, 4), dtype=block.dtype)
    out[2:, :2] = block
    return out


def enlarged_operators(meson: MesonParams, collapse: CollapseParams) -> EnlargedOperators:
    """All 4x4 block operators of the enlarged-space construction.

    The Hamiltonian and the self-adjoint collapse operator act on the
    flavor block only (the decay block carries no dynamics); the decay
    operators occupy the lower-left block, mapping flavor to decay states.
    """
    return EnlargedOperators(
        hamiltonian=_upper_block(mass_operator(meson)),
        collapse_a=_upper_block(collapse_operator_A(meson, collapse)),
        collapse_b=_lower_left_block(collapse_operator_B(meson, collapse)),
        lindblad_decay=_lower_left_block(lindblad_decay_operator(meson)),
    )


def induced_decay_widths(meson: MesonParams, collapse: CollapseParams) -> tuple[float, float]:
    """Decay widths generated by the time-asymmetric collapse dynamics.

    gamma_i = lambda_eff * (2 beta - 1) * m~_i^2, nonnegative only for
    beta >= 1/2; the unphysical sign is flagged rather than returned.
    """
    if collapse.beta < 0.5:
        raise NegativeWidth(
            f"beta = {collapse.beta} < 1/2 yields negative induced widths"
        )
    lam = collapse.effective_rate
    ratios = mass_ratios(meson, collapse)
    widths = lam * (2.0 * collapse.beta - 1.0) * ratios**2
    return float(widths[0]), float(widths[1])
