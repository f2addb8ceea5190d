"""
app/core/inference.py - Posterior covariances, smoothing parameter uncertainty corrections, edf and AIC

All matrices are first computed on the retained working coefficients of
the converged fit and then embedded and rotated back to the original
coefficients, beta = T beta_working.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats
from scipy.linalg import cholesky, solve_triangular

from app.core.inner_solver import FitState
from app.core.numerics import array_from_json, array_to_json
from app.core.sensitivity import LamlDerivs

logger = logging.getLogger(__name__)

VRHO_FLOOR = 1e-8


@dataclass(frozen=True)
class FitResult:
    beta: np.ndarray
    rho: np.ndarray
    psi: np.ndarray
    Vb: np.ndarray
    Vc: np.ndarray
    V_ks: np.ndarray
    Vp: np.ndarray
    Vp_corrected: np.ndarray
    V_rho: np.ndarray
    V_first: np.ndarray
    V_second: np.ndarray
    J: np.ndarray
    tau0: float
    tau1: float
    tau: float
    edf: np.ndarray
    loglik: float
    aic: float
    aic_corrected: float
    aic_tau1: float
    laml: float
    n_psi: int = 0
    dropped: List[int] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        out: Dict[str, object] = {}
        for name, value in self.__dict__.items():
            out[name] = array_to_json(value) if isinstance(value, np.ndarray) else value
        return out

    @classmethod
    def from_dict(cls, raw: Dict[str, object]) -> "FitResult":
        kwargs = {}
        for name, f in cls.__dataclass_fields__.items():
            value = raw[name]
            if f.type is np.ndarray:
                value = array_from_json(value)
            kwargs[name] = value
        return cls(**kwargs)


def compute_Vrho(hess: np.ndarray, dropped: Sequence[int] = (), floor: float = VRHO_FLOOR) -> np.ndarray:
    """
    Inverse of the negative LAML Hessian over the retained outer parameters.

    Eigenvalues below floor * max are raised to that floor before
    inversion; rows and columns of dropped parameters are zero.
    """
    n = hess.shape[0]
    out = np.zeros((n, n))
    keep = [i for i in range(n) if i not in set(dropped)]
    if not keep:
        return out
    A = -0.5 * (hess + hess.T)[np.ix_(keep, keep)]
    ev, u = np.linalg.eigh(A)
    top = float(np.max(np.abs(ev)))
    ev = np.maximum(ev, floor * top if top > 0 else 1.0)
    out[np.ix_(keep, keep)] = (u / ev) @ u.T
    return out


def cholesky_derivatives(Vb: np.ndarray, H_derivs: Sequence[np.ndarray]) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    Upper Cholesky factor R of Vb = R'R and its derivatives.

    With dVb_k = -Vb H_k Vb, dR_k = Phi(R^-T dVb_k R^-1) R where Phi keeps
    the upper triangle and halves the diagonal.
    """
    R = cholesky(0.5 * (Vb + Vb.T), lower=False)
    Rinv = solve_triangular(R, np.eye(R.shape[0]))
    out = []
    for Hk in H_derivs:
        dV = -Vb @ Hk @ Vb
        X = Rinv.T @ dV @ Rinv
        phi = np.triu(X)
        phi[np.diag_indices_from(phi)] *= 0.5
        out.append(phi @ R)
    return R, out


def correct_covariance(
    Vb: np.ndarray, dbeta: np.ndarray, V_rho: np.ndarray, H_derivs: Sequence[np.ndarray]
) -> Tuple[np.ndarray, np.ndarray]:
    """First order correction J V_rho J' and the Cholesky factor term V''"""
    V_first = dbeta @ V_rho @ dbeta.T
    V_first = 0.5 * (V_first + V_first.T)
    V_second = np.zeros_like(Vb)
    if not np.any(V_rho):
        return V_first, V_second
    _, dR = cholesky_derivatives(Vb, H_derivs)
    ev, u = np.linalg.eigh(0.5 * (V_rho + V_rho.T))
    for s in range(len(ev)):
        if ev[s] <= 0.0:
            continue
        c = u[:, s] * np.sqrt(ev[s])
        D = sum(c[k] * dR[k] for k in range(len(dR)))
        V_second += D.T @ D
    return V_first, 0.5 * (V_second + V_second.T)


def edf(Vb: np.ndarray, info: np.ndarray, Vc: Optional[np.ndarray] = None) -> Tuple[float, float, float, np.ndarray]:
    """tau0 = tr(F), tau1 = tr(2F - FF) with F = Vb I, tau = tr(I Vc), and diag(F)"""
    F = Vb @ info
    tau0 = float(np.trace(F))
    tau1 = float(2.0 * tau0 - np.sum(F * F.T))
    tau = tau0 if Vc is None else float(np.sum(info * Vc.T))
    return tau0, tau1, tau, np.diag(F).copy()


def corrected_aic(loglik: float, tau0: float, tau: float, n_psi: int = 0) -> Tuple[float, float]:
    conventional = -2.0 * loglik + 2.0 * (tau0 + n_psi)
    corrected = -2.0 * loglik + 2.0 * (tau + n_psi)
    return conventional, corrected


def credible_band(X: np.ndarray, beta: np.ndarray, V: np.ndarray, level: float = 0.95) -> pd.DataFrame:
    """Pointwise fit, standard error and band of X beta"""
    fit = X @ beta
    se = np.sqrt(np.maximum(np.sum((X @ V) * X, axis=1), 0.0))
    z = stats.norm.ppf(0.5 + 0.5 * level)
    return pd.DataFrame({"fit": fit, "se": se, "lower": fit - z * se, "upper": fit + z * se})


def _embed(mat: np.ndarray, keep: np.ndarray, P: int, square: bool = True) -> np.ndarray:
    if mat.ndim == 1:
        out = np.zeros(P)
        out[keep] = mat
        return out
    if square:
        out = np.zeros((P, P))
        out[np.ix_(keep, keep)] = mat
        return out
    out = np.zeros((P, mat.shape[1]))
    out[keep] = mat
    return out


def build_fit_result(
    state: FitState,
    derivs: LamlDerivs,
    transform: np.ndarray,
    dropped_outer: Sequence[int] = (),
) -> FitResult:
    """
    Assemble every covariance and complexity summary of a converged fit.

    edf holds diag(Vb I) in working coordinates. The working transform is
    block diagonal over penalty blocks, so sums over a term's columns equal
    the term's edf in any coordinates.
    """
    Vb = derivs.H_inv
    info = -state.point.hessian()
    info = 0.5 * (info + info.T)
    V_rho = compute_Vrho(derivs.hess, dropped_outer)
    V_first, V_second = correct_covariance(Vb, derivs.dbeta, V_rho, derivs.H_derivs)
    Vc = Vb + V_first + V_second
    V_ks = Vb + V_first
    Vp = Vb @ info @ Vb
    tau0, tau1, tau, edf_coef = edf(Vb, info, Vc)
    n_psi = len(state.psi)
    aic, aic_corrected = corrected_aic(state.loglik, tau0, tau, n_psi)
    aic_tau1 = -2.0 * state.loglik + 2.0 * (tau1 + n_psi)

    P = len(state.beta)
    keep = state.keep
    T = transform

    def rotate(mat: np.ndarray) -> np.ndarray:
        full = _embed(mat, keep, P)
        return T @ full @ T.T

    J = T @ _embed(derivs.dbeta, keep, P, square=False)
    logger.info("edf tau0=%.4f tau1=%.4f tau=%.4f; AIC %.4f corrected %.4f", tau0, tau1, tau, aic, aic_corrected)
    return FitResult(
        beta=T @ state.beta,
        rho=state.rho.copy(),
        psi=state.psi.copy(),
        Vb=rotate(Vb),
        Vc=rotate(Vc),
        V_ks=rotate(V_ks),
        Vp=rotate(Vp),
        Vp_corrected=rotate(Vp + V_first),
        V_rho=V_rho,
        V_first=rotate(V_first),
        V_second=rotate(V_second),
        J=J,
        tau0=tau0,
        tau1=tau1,
        tau=tau,
        edf=_embed(edf_coef, keep, P),
        loglik=float(state.loglik),
        aic=aic,
        aic_corrected=aic_corrected,
        aic_tau1=aic_tau1,
        laml=float(derivs.value),
        n_psi=n_psi,
        dropped=[int(i) for i in state.dropped],
    )
