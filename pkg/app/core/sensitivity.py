"""
app/core/sensitivity.py - Implicit derivatives of the fitted coefficients and the Laplace approximate marginal likelihood

The outer parameter vector is zeta = (rho, free psi). Differentiating the
stationarity condition of the inner fit gives d beta/d zeta and the second
derivatives, which feed the gradient and Hessian of the criterion
V = L(beta) + log|S|+/2 - log|H|/2 + M_p log(2 pi)/2.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from app.core.exceptions import IndefiniteHessianError
from app.core.inner_solver import FitState
from app.core.penalty_algebra import logdet_splus

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class LamlDerivs:
    value: float
    grad: np.ndarray
    hess: np.ndarray
    dbeta: np.ndarray
    d2beta: np.ndarray
    H_inv: np.ndarray
    H_derivs: List[np.ndarray] = field(default_factory=list)
    logdet_H: float = 0.0
    logdet_S: float = 0.0


def _inverse(state: FitState) -> np.ndarray:
    fac = state.factor
    if not fac.full_rank:
        raise IndefiniteHessianError(
            f"penalized Hessian is not positive definite at convergence (rank {fac.rank} of {fac.n})"
        )
    return fac.inverse()


def logdet_hessian(state: FitState) -> float:
    """log|H| in original coordinates; diagonal scalings of the working basis are undone"""
    fac = state.factor
    if not fac.full_rank:
        raise IndefiniteHessianError(
            f"penalized Hessian is not positive definite at convergence (rank {fac.rank} of {fac.n})"
        )
    return fac.logdet() - 2.0 * float(np.sum(state.structure.log_scale_vector()))


def laml_value(state: FitState) -> float:
    ldS, _, _ = logdet_splus(state.structure, state.rho)
    M_p = state.structure.M_p
    return float(state.penalized_ll + 0.5 * ldS - 0.5 * logdet_hessian(state) + 0.5 * M_p * LOG_2PI)


def _n_outer(state: FitState) -> int:
    return len(state.rho) + len(state.psi)


def _gradient_drivers(state: FitState) -> np.ndarray:
    """Columns dG/dzeta_k of the penalized score at fixed beta"""
    beta = state.beta_kept
    M = len(state.rho)
    lam = np.exp(state.rho)
    G = np.zeros((len(beta), _n_outer(state)))
    for k in range(M):
        G[:, k] = -lam[k] * state.structure.apply(k, beta)
    if len(state.psi):
        G[:, M:] = state.point.beta_psi()
    return G


def dbeta_drho(state: FitState, H_inv: Optional[np.ndarray] = None) -> np.ndarray:
    """
    d beta/d zeta as a P x (M + Q) matrix on the retained coefficients.

    Each column solves H col = -lambda_k S^k beta for a smoothing parameter
    and H col = l_beta_psi for an extra parameter.
    """
    H_inv = _inverse(state) if H_inv is None else H_inv
    return H_inv @ _gradient_drivers(state)


def _direction(state: FitState, k: int) -> Optional[np.ndarray]:
    M = len(state.rho)
    if k < M:
        return None
    u = np.zeros(len(state.psi))
    u[k - M] = 1.0
    return u


def hessian_derivatives(state: FitState, dbeta: np.ndarray) -> List[np.ndarray]:
    """dH/dzeta_k = -dl_beta_beta/dzeta_k (+ lambda_k S^k for a smoothing parameter)"""
    M = len(state.rho)
    lam = np.exp(state.rho)
    out = []
    for k in range(_n_outer(state)):
        Hk = -state.point.hessian_derivative(dbeta[:, k], _direction(state, k))
        if k < M:
            Hk = Hk + lam[k] * state.structure.penalty(k)
        out.append(0.5 * (Hk + Hk.T))
    return out


def d2beta_drho2(
    state: FitState,
    dbeta: np.ndarray,
    H_derivs: List[np.ndarray],
    H_inv: Optional[np.ndarray] = None,
    diagonal_correction: bool = True,
) -> np.ndarray:
    """
    Second derivatives of beta, symmetric in the last two indices.

    From H b_k = G_k: H b_kl = dG_k/dzeta_l - H_l b_k. For smoothing
    parameters dG_k/drho_l contains -delta_kl lambda_k S^k beta, which
    contributes delta_kl b_k.
    """
    H_inv = _inverse(state) if H_inv is None else H_inv
    M = len(state.rho)
    n = _n_outer(state)
    lam = np.exp(state.rho)
    beta = state.beta_kept
    Pr = len(beta)
    Q = len(state.psi)
    zeros = np.zeros(Pr)
    lbbpsi = [state.point.hessian_derivative(zeros, _direction(state, M + a)) for a in range(Q)]
    lbpp = state.point.beta_psi_psi() if Q else None
    out = np.zeros((Pr, n, n))
    for k in range(n):
        for l in range(k, n):
            if k < M:
                dG = -lam[k] * state.structure.apply(k, dbeta[:, l])
                if k == l and diagonal_correction:
                    dG = dG - lam[k] * state.structure.apply(k, beta)
            else:
                a = k - M
                dG = lbbpsi[a] @ dbeta[:, l]
                if l >= M:
                    dG = dG + lbpp[:, a, l - M]
            col = H_inv @ (dG - H_derivs[l] @ dbeta[:, k])
            out[:, k, l] = col
            out[:, l, k] = col
    return out


def laml_grad_hess(state: FitState, diagonal_correction: bool = True) -> LamlDerivs:
    """Criterion value, gradient and Hessian in zeta, with the implicit derivatives used"""
    H_inv = _inverse(state)
    M = len(state.rho)
    n = _n_outer(state)
    lam = np.exp(state.rho)
    beta = state.beta_kept
    pt = state.point

    ldS, ldS_grad, ldS_hess = logdet_splus(state.structure, state.rho)
    logdet_H = logdet_hessian(state)
    value = float(state.penalized_ll + 0.5 * ldS - 0.5 * logdet_H + 0.5 * state.structure.M_p * LOG_2PI)

    G = _gradient_drivers(state)
    dbeta = H_inv @ G
    H_derivs = hessian_derivatives(state, dbeta)
    d2beta = d2beta_drho2(state, dbeta, H_derivs, H_inv, diagonal_correction)
    HiHk = [H_inv @ Hk for Hk in H_derivs]

    bSb = np.array([lam[k] * float(beta @ state.structure.apply(k, beta)) for k in range(M)])
    L1 = np.concatenate([-0.5 * bSb, pt.psi_gradient()]) if n > M else -0.5 * bSb
    L2 = np.zeros((n, n))
    L2[:M, :M] = np.diag(-0.5 * bSb)
    if n > M:
        L2[M:, M:] = pt.psi_hessian()
    dS1 = np.zeros(n)
    dS1[:M] = ldS_grad
    dS2 = np.zeros((n, n))
    dS2[:M, :M] = ldS_hess

    grad = np.array([L1[k] + 0.5 * dS1[k] - 0.5 * np.trace(HiHk[k]) for k in range(n)])
    hess = np.zeros((n, n))
    for k in range(n):
        for l in range(k, n):
            tr2 = -pt.hessian_second_trace(
                H_inv,
                (dbeta[:, k], _direction(state, k)),
                (dbeta[:, l], _direction(state, l)),
                d2beta[:, k, l],
            )
            if k == l and k < M:
                tr2 += lam[k] * float(np.sum(H_inv * state.structure.penalty(k)))
            cross = float(np.sum(HiHk[k] * HiHk[l].T))
            h = L2[k, l] + float(G[:, k] @ dbeta[:, l]) + 0.5 * dS2[k, l] - 0.5 * tr2 + 0.5 * cross
            hess[k, l] = hess[l, k] = h
    return LamlDerivs(value, grad, hess, dbeta, d2beta, H_inv, H_derivs, logdet_H, ldS)
