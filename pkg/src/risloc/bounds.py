"""Fisher information and Cramer-Rao bounds for position and clock offset.

The information matrix is first accumulated over all transmissions and
subcarriers in the channel-parameter domain, then mapped to the location
domain (position, amplitudes, clock offset) through the analytic Jacobian of
the geometry.  The resulting 7x7 matrix is inverted with an
eigendecomposition after Jacobi normalization; a singular matrix is a
meaningful physical outcome (the clock offset is unidentifiable without the
reflected path) and raises :class:`SingularFim` rather than crashing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    C_LIGHT,
    CoincidentNodesError,
    default_precoding,
    geometry_to_params,
    path_signal_factors,
    precoded_pilots,
    ris_coupled_pilots,
    steering_derivative,
)

# Reciprocal condition number of the normalized location FIM below which the
# matrix is reported singular.
FIM_RCOND = 1e-14


class SingularFim(Exception):
    """The location-domain FIM is numerically singular.

    Attributes
    ----------
    smallest_eigenvalue : float
        Smallest eigenvalue of the (normalized, when available) FIM.
    """

    def __init__(self, smallest_eigenvalue, message=None):
        self.smallest_eigenvalue = float(smallest_eigenvalue)
        if message is None:
            message = (f"location FIM is singular "
                       f"(smallest eigenvalue {self.smallest_eigenvalue:.3e})")
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class BoundsReport:
    """Scalar error bounds plus the covariance lower-bound matrix."""

    peb: float          # position error bound [m]
    ceb: float          # clock offset error bound [s]
    psi: np.ndarray     # (7, 7) CRLB matrix in the location domain


def gradient_matrix(params, known, precoding, scenario_like):
    """Partial derivatives of the noiseless signal w.r.t. channel params.

    Returns shape (n_tx, n_sub, 8), columns ordered as
    ``ChannelParams.as_vector``.  The modulus derivatives are evaluated in a
    form that stays finite when the corresponding modulus is zero.
    """
    w1, w2 = path_signal_factors(params, known, precoding, scenario_like)
    a_bs_dot = steering_derivative(params.theta_bm, scenario_like.n_bs)
    a_ris_dot = steering_derivative(params.theta_rm, scenario_like.n_ris)
    dw1 = np.einsum("b,gbn->gn", a_bs_dot, precoded_pilots(precoding))
    dw2 = np.einsum("r,grn->gn", a_ris_dot, ris_coupled_pilots(precoding, known))

    kappa = scenario_like.kappa
    ramp_bm = np.exp(-1j * kappa * params.tau_bm)[None, :]
    ramp_r = np.exp(-1j * kappa * (known.tau_br + params.tau_rm))[None, :]
    sqp = np.sqrt(scenario_like.power)
    unit_bm = sqp * np.exp(1j * params.phi_bm)
    unit_r = sqp * np.exp(1j * params.phi_r)

    per_rho_bm = unit_bm * ramp_bm * w1   # signal term divided by rho_bm
    per_rho_r = unit_r * ramp_r * w2      # signal term divided by rho_r
    sig_bm = params.rho_bm * per_rho_bm
    sig_r = params.rho_r * per_rho_r

    n_tx, n_sub = w1.shape
    grad = np.empty((n_tx, n_sub, 8), dtype=complex)
    grad[..., 0] = -1j * kappa[None, :] * sig_bm
    grad[..., 1] = params.rho_bm * unit_bm * ramp_bm * dw1
    grad[..., 2] = per_rho_bm
    grad[..., 3] = 1j * sig_bm
    grad[..., 4] = -1j * kappa[None, :] * sig_r
    grad[..., 5] = params.rho_r * unit_r * ramp_r * dw2
    grad[..., 6] = per_rho_r
    grad[..., 7] = 1j * sig_r
    return grad


def signal_gradient(g, n, params, known, precoding, scenario_like):
    """8-vector of signal derivatives for one (transmission, subcarrier)."""
    if not 0 <= g < scenario_like.n_tx:
        raise ValueError(f"transmission index {g} outside [0, {scenario_like.n_tx})")
    if not 0 <= n < scenario_like.n_sub:
        raise ValueError(f"subcarrier index {n} outside [0, {scenario_like.n_sub})")
    return gradient_matrix(params, known, precoding, scenario_like)[g, n]


def channel_fim(params, known, precoding, scenario_like):
    """8x8 Fisher information matrix in the channel-parameter domain."""
    grad = gradient_matrix(params, known, precoding, scenario_like)
    fim = (2.0 / scenario_like.sigma2) * np.real(
        np.einsum("gni,gnj->ij", np.conj(grad), grad))
    return 0.5 * (fim + fim.T)


def location_jacobian(scenario):
    """7x8 Jacobian of channel parameters w.r.t. location parameters.

    Rows follow ``LocationParams.as_vector``, columns
    ``ChannelParams.as_vector``.
    """
    rel_p = scenario.p - scenario.q
    rel_pr = scenario.p - scenario.r
    d_bm = float(np.linalg.norm(rel_p))
    d_rm = float(np.linalg.norm(rel_pr))
    if min(d_bm, d_rm) <= 0.0:
        raise CoincidentNodesError("Jacobian undefined for coincident nodes")

    jac = np.zeros((7, 8))
    jac[0, 0] = rel_p[0] / (C_LIGHT * d_bm)
    jac[1, 0] = rel_p[1] / (C_LIGHT * d_bm)
    jac[0, 1] = -rel_p[1] / d_bm**2
    jac[1, 1] = rel_p[0] / d_bm**2
    jac[0, 4] = rel_pr[0] / (C_LIGHT * d_rm)
    jac[1, 4] = rel_pr[1] / (C_LIGHT * d_rm)
    jac[0, 5] = -rel_pr[1] / d_rm**2
    jac[1, 5] = rel_pr[0] / d_rm**2
    jac[2, 2] = 1.0  # direct-path modulus
    jac[3, 3] = 1.0  # direct-path phase
    jac[4, 6] = 1.0  # cascaded modulus
    jac[5, 7] = 1.0  # cascaded phase
    jac[6, 0] = 1.0  # clock offset enters both delays
    jac[6, 4] = 1.0
    return jac


def location_fim(params, known, precoding, scenario):
    """7x7 Fisher information matrix in the location domain."""
    jac = location_jacobian(scenario)
    fim = jac @ channel_fim(params, known, precoding, scenario) @ jac.T
    return 0.5 * (fim + fim.T)


def compute_bounds(scenario, precoding=None, params=None, known=None):
    """Position and clock-offset error bounds for a scenario.

    The location FIM is inverted through an eigendecomposition of its
    Jacobi-normalized form (unit diagonal); raw-unit eigenvalues span tens
    of orders of magnitude, so conditioning is checked on the normalized
    matrix.  Raises :class:`SingularFim` when the reciprocal condition
    number falls below ``FIM_RCOND``.
    """
    if params is None or known is None:
        if params is not None or known is not None:
            raise ValueError("pass params and known together or neither")
        params, known = geometry_to_params(scenario)
    if precoding is None:
        precoding = default_precoding(scenario, known)

    fim = location_fim(params, known, precoding, scenario)
    diag = np.diag(fim)
    scale_floor = np.max(np.abs(diag)) * 1e-30 if np.any(diag > 0) else 0.0
    if np.any(diag <= scale_floor):
        raise SingularFim(np.min(np.linalg.eigvalsh(fim)))

    d = np.sqrt(diag)
    normalized = fim / np.outer(d, d)
    eigvals, eigvecs = np.linalg.eigh(normalized)
    if eigvals[0] <= eigvals[-1] * FIM_RCOND:
        raise SingularFim(eigvals[0])

    psi_norm = (eigvecs / eigvals[None, :]) @ eigvecs.T
    psi = psi_norm / np.outer(d, d)
    peb = float(np.sqrt(psi[0, 0] + psi[1, 1]))
    ceb = float(np.sqrt(psi[6, 6]))
    psi = 0.5 * (psi + psi.T)
    psi.setflags(write=False)
    return BoundsReport(peb=peb, ceb=ceb, psi=psi)
