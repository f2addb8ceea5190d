"""
app/core/inner_solver.py - Penalized likelihood maximization at fixed smoothing parameters

Two routes reach the same optimum: a preconditioned, perturbed Newton
iteration for any likelihood and PIRLS for single-predictor observation
families. Both halve steps until the penalized log likelihood increases.
After convergence, unidentifiable coefficients are detected from a pivoted
Cholesky factor of the balanced Hessian and dropped.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Optional, Tuple

import numpy as np

from app.core.exceptions import DivergenceError, InitializationError
from app.core.numerics import PivotedCholesky, perturbed_cholesky, pivoted_cholesky
from app.core.penalty_algebra import PenaltyStructure

logger = logging.getLogger(__name__)


@dataclass
class InnerOptions:
    tol: float = 1e-7
    max_iter: int = 100
    min_step: float = 2.0**-30
    stall_tol: float = 1e-5
    precondition: bool = True
    rank_tol: float = 1e-10


@dataclass
class FitState:
    """
    Result of the inner fit at one (rho, psi).

    beta is full length in working coordinates with exact zeros at dropped
    indices. H, the point, the likelihood and the penalty structure all refer
    to the retained coefficients only.
    """

    beta: np.ndarray
    rho: np.ndarray
    psi: np.ndarray
    keep: np.ndarray
    dropped: np.ndarray
    H: np.ndarray
    penalized_ll: float
    loglik: float
    point: Any
    lik: Any
    structure: PenaltyStructure
    iterations: int = 0
    perturbed_iterations: int = 0
    preconditioner: Optional[np.ndarray] = None
    _factor: Optional[PivotedCholesky] = field(default=None, repr=False)

    @property
    def beta_kept(self) -> np.ndarray:
        return self.beta[self.keep]

    @property
    def factor(self) -> PivotedCholesky:
        if self._factor is None:
            self._factor = pivoted_cholesky(self.H)
        return self._factor


def _penalized(point, S: np.ndarray, beta: np.ndarray) -> float:
    return point.value - 0.5 * float(beta @ S @ beta)


def _preconditioner(H: np.ndarray, enabled: bool) -> np.ndarray:
    d = np.abs(np.diag(H))
    if not enabled:
        return np.ones_like(d)
    return np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 1.0)


def solve_penalized(H: np.ndarray, rhs: np.ndarray, precondition: bool = True) -> Tuple[np.ndarray, float, np.ndarray]:
    """Solve H x = rhs through D H D with a perturbed pivoted Cholesky factor"""
    D = _preconditioner(H, precondition)
    fac, eps = perturbed_cholesky(H * D[:, None] * D[None, :])
    return D * fac.solve(D * rhs), eps, D


def _halve(lik, S, psi, beta, step, pll, gnorm, options: InnerOptions):
    """
    Halve the step until the penalized log likelihood increases. Near the
    optimum the increase drops below rounding, so a step that leaves the
    value unchanged to rounding but shrinks the gradient is also accepted.
    """
    alpha = 1.0
    halvings = 0
    flat = 8.0 * np.finfo(float).eps * (1.0 + abs(pll))
    while alpha >= options.min_step:
        trial = beta + alpha * step
        point = lik.at(trial, psi, order=2, psi_order=0)
        value = _penalized(point, S, trial)
        if np.isfinite(value) and value > pll:
            return trial, point, value, halvings
        if np.isfinite(value) and value >= pll - flat:
            g = point.gradient() - S @ trial
            if g.size and float(np.max(np.abs(g))) < 0.5 * gnorm:
                return trial, point, value, halvings
        alpha *= 0.5
        halvings += 1
    return None, None, pll, halvings


def newton_fit(lik, S: np.ndarray, beta: np.ndarray, psi=None, options: Optional[InnerOptions] = None):
    """
    Newton iteration on the penalized log likelihood l(beta) - beta' S beta / 2.

    Returns (beta, point, penalized value, iterations, perturbed iterations, D).
    """
    options = options or InnerOptions()
    beta = np.asarray(beta, dtype=float).copy()
    point = lik.at(beta, psi, order=2, psi_order=0)
    pll = _penalized(point, S, beta)
    if not np.isfinite(pll):
        raise InitializationError("penalized log likelihood is not finite at the starting coefficients")
    perturbed = 0
    D = np.ones(len(beta))
    for it in range(options.max_iter):
        grad = point.gradient() - S @ beta
        gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
        if gnorm < options.tol * (1.0 + abs(pll)):
            return beta, point, pll, it, perturbed, D
        H = -point.hessian() + S
        step, eps, D = solve_penalized(H, grad, options.precondition)
        if eps > 0.0:
            perturbed += 1
        new_beta, new_point, new_pll, halvings = _halve(lik, S, psi, beta, step, pll, gnorm, options)
        logger.debug("newton %d: pll=%.10g |grad|=%.3g eps=%.3g halvings=%d", it, pll, gnorm, eps, halvings)
        if new_beta is None:
            if gnorm <= options.stall_tol * (1.0 + abs(pll)):
                return beta, point, pll, it, perturbed, D
            raise DivergenceError(f"no increasing step after {halvings} halvings (|grad|={gnorm:.3g})", state=beta)
        beta, point, pll = new_beta, new_point, new_pll
    raise DivergenceError(f"inner Newton iteration did not converge in {options.max_iter} iterations", state=beta)


def pirls_fit(lik, S: np.ndarray, beta: np.ndarray, psi=None, options: Optional[InnerOptions] = None):
    """
    Penalized iteratively re-weighted least squares for one linear predictor.

    Working weights w = -l_eta_eta are clamped at zero and the right hand
    side uses the product w z = w (eta - offset) + l_eta, so zero weights
    need no division.
    """
    options = options or InnerOptions()
    beta = np.asarray(beta, dtype=float).copy()
    X = lik.X[0]
    offset = lik.offsets[0]
    point = lik.at(beta, psi, order=2, psi_order=0)
    pll = _penalized(point, S, beta)
    if not np.isfinite(pll):
        raise InitializationError("penalized log likelihood is not finite at the starting coefficients")
    perturbed = 0
    D = np.ones(len(beta))
    for it in range(options.max_iter):
        grad = point.gradient() - S @ beta
        gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
        if gnorm < options.tol * (1.0 + abs(pll)):
            return beta, point, pll, it, perturbed, D
        l1 = point.d.get((0,), np.zeros(lik.n))
        l2 = point.d.get((0, 0), np.zeros(lik.n))
        w = np.maximum(-l2, 0.0)
        wz = w * (point.eta[0] - offset) + l1
        A = X.T @ (w[:, None] * X) + S
        target, eps, D = solve_penalized(A, X.T @ wz, options.precondition)
        if eps > 0.0:
            perturbed += 1
        new_beta, new_point, new_pll, halvings = _halve(lik, S, psi, beta, target - beta, pll, gnorm, options)
        logger.debug("pirls %d: pll=%.10g |grad|=%.3g eps=%.3g halvings=%d", it, pll, gnorm, eps, halvings)
        if new_beta is None:
            if gnorm <= options.stall_tol * (1.0 + abs(pll)):
                return beta, point, pll, it, perturbed, D
            raise DivergenceError(f"PIRLS step failed after {halvings} halvings (|grad|={gnorm:.3g})", state=beta)
        beta, point, pll = new_beta, new_point, new_pll
    raise DivergenceError(f"PIRLS did not converge in {options.max_iter} iterations", state=beta)


def _run(lik, S, beta, psi, options):
    if lik.uses_pirls:
        return pirls_fit(lik, S, beta, psi, options)
    return newton_fit(lik, S, beta, psi, options)


def _state(lik, structure, rho, psi, keep, P, outcome) -> FitState:
    beta_k, point, pll, iterations, perturbed, D = outcome
    S = structure.assemble(rho)
    point = lik.at(beta_k, psi, order=4, psi_order=2)
    beta = np.zeros(P)
    beta[keep] = beta_k
    dropped = np.setdiff1d(np.arange(P), keep)
    return FitState(
        beta=beta,
        rho=np.asarray(rho, dtype=float).copy(),
        psi=np.zeros(0) if psi is None else np.asarray(psi, dtype=float).copy(),
        keep=np.asarray(keep, dtype=int),
        dropped=dropped,
        H=-point.hessian() + S,
        penalized_ll=pll,
        loglik=point.value,
        point=point,
        lik=lik,
        structure=structure,
        iterations=iterations,
        perturbed_iterations=perturbed,
        preconditioner=D,
    )


def detect_and_drop(
    state: FitState,
    structure: PenaltyStructure,
    options: Optional[InnerOptions] = None,
) -> FitState:
    """
    Drop the coefficients a pivoted Cholesky factor of H/|H| + S/|S| leaves last.

    S is the balanced penalty, which does not depend on the smoothing
    parameters, so very large smoothing parameters alone never cause a drop.
    The retained problem is refitted from the current estimate.
    """
    options = options or InnerOptions()
    lik = state.lik
    P = len(state.beta)
    H = -state.point.hessian()
    S = structure.balanced()
    A = np.zeros_like(H)
    for mat in (H, S):
        nrm = np.linalg.norm(mat)
        if nrm > 0:
            A += mat / nrm
    top = float(np.max(np.diag(A))) if P else 0.0
    fac = pivoted_cholesky(A, tol=options.rank_tol * top)
    q = P - fac.rank
    if q == 0:
        return state
    if q == P:
        raise DivergenceError("every coefficient appears unidentifiable", state=state)
    keep = np.sort(fac.piv[: fac.rank])
    logger.info("dropping %d unidentifiable coefficient(s): %s", q, np.sort(fac.piv[fac.rank :]).tolist())
    lik_r = lik.restrict(keep)
    struct_r = structure.restrict(keep)
    S_r = struct_r.assemble(state.rho)
    psi = state.psi if len(state.psi) else None
    outcome = _run(lik_r, S_r, state.beta[keep], psi, options)
    return _state(lik_r, struct_r, state.rho, psi, keep, P, outcome)


def fit_coefficients(
    lik,
    structure: PenaltyStructure,
    rho: np.ndarray,
    psi: Optional[np.ndarray] = None,
    beta_init: Optional[np.ndarray] = None,
    options: Optional[InnerOptions] = None,
) -> FitState:
    """Fit beta at fixed (rho, psi) and drop unidentifiable coefficients"""
    options = options or InnerOptions()
    P = lik.P
    beta0 = lik.initial_beta(psi) if beta_init is None else np.asarray(beta_init, dtype=float)
    S = structure.assemble(rho)
    outcome = _run(lik, S, beta0, psi, options)
    state = _state(lik, structure, rho, psi, np.arange(P), P, outcome)
    return detect_and_drop(state, structure, options)
