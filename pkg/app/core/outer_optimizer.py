"""
app/core/outer_optimizer.py - Newton optimization of the marginal likelihood over log smoothing and extra parameters
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from app.core.exceptions import DivergenceError, IndefiniteHessianError, OuterConvergenceError
from app.core.inner_solver import FitState, InnerOptions, fit_coefficients
from app.core.penalty_algebra import RHO_BOUND, PenaltyStructure
from app.core.sensitivity import LamlDerivs, laml_grad_hess, laml_value

logger = logging.getLogger(__name__)


@dataclass
class OuterOptions:
    tol: float = 1e-6
    max_iter: int = 200
    drop_tol: float = 1e-4
    max_step: float = 5.0
    eigen_floor: float = 1e-8
    min_step: float = 2.0**-30
    inner: InnerOptions = field(default_factory=InnerOptions)


@dataclass
class OuterRecord:
    iteration: int
    value: float
    grad_norm: float
    dropped: List[int]
    halvings: int
    zeta: List[float]


@dataclass
class OuterTrace:
    records: List[OuterRecord] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.records)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "iteration": r.iteration,
                    "laml": r.value,
                    "grad_norm": r.grad_norm,
                    "dropped": ",".join(str(i) for i in r.dropped),
                    "halvings": r.halvings,
                }
                for r in self.records
            ]
        )

    def to_dict(self) -> dict:
        return {"converged": self.converged, "records": [r.__dict__.copy() for r in self.records]}


def _information(lik, psi: Optional[np.ndarray]) -> np.ndarray:
    beta = lik.initial_beta(psi)
    info = -lik.at(beta, psi, order=2, psi_order=0).hessian()
    return 0.5 * (info + info.T)


def initial_rho(lik, structure: PenaltyStructure, psi: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Starting log smoothing parameters putting each penalty at half its rank in edf.

    For each penalty S^j on block b, the generalized eigenvalues mu of
    S^j v = mu |I_b| v give the provisional edf sum 1/(1 + lambda mu) over
    the penalized directions; rho_j solves edf = rank/2.
    """
    M = structure.M
    rho = np.zeros(M)
    if M == 0:
        return rho
    info = _information(lik, psi)
    for b in structure.blocks:
        idx = b.indices
        ib = info[np.ix_(idx, idx)]
        ev, u = np.linalg.eigh(ib)
        ib = (u * np.abs(ev)) @ u.T
        ridge = 1e-8 * max(float(np.max(np.diag(ib))), 1e-300)
        ib = ib + ridge * np.eye(len(idx))
        # generalized eigenproblem through the Cholesky factor of the information
        ci = np.linalg.inv(np.linalg.cholesky(ib))
        for mat, j in zip(b.matrices, b.sp_indices):
            mu = np.linalg.eigvalsh(ci @ mat @ ci.T)
            top = float(np.max(np.abs(mu))) if mu.size else 0.0
            mu = mu[mu > 1e-10 * top] if top > 0 else mu[:0]
            if mu.size == 0:
                continue
            target = 0.5 * len(mu)

            def excess(r, mu=mu, target=target):
                return float(np.sum(1.0 / (1.0 + np.exp(r) * mu))) - target

            lo, hi = -RHO_BOUND, RHO_BOUND
            if excess(lo) <= 0.0:
                rho[j] = lo
            elif excess(hi) >= 0.0:
                rho[j] = hi
            else:
                rho[j] = brentq(excess, lo, hi, xtol=1e-10)
    logger.debug("initial rho: %s", np.round(rho, 4).tolist())
    return rho


def _clamp(zeta: np.ndarray) -> np.ndarray:
    return np.clip(zeta, -RHO_BOUND, RHO_BOUND)


def _fit(lik, structure, zeta, M, beta, options: OuterOptions) -> FitState:
    psi = zeta[M:] if len(zeta) > M else None
    try:
        return fit_coefficients(lik, structure, zeta[:M], psi, beta, options.inner)
    except DivergenceError:
        if beta is None:
            raise
        # retry from the family's own start before giving up
        return fit_coefficients(lik, structure, zeta[:M], psi, None, options.inner)


def _newton_step(grad: np.ndarray, hess: np.ndarray, floor: float, cap: float) -> np.ndarray:
    """Ascent direction from -hess with eigenvalues flipped and floored"""
    ev, u = np.linalg.eigh(-0.5 * (hess + hess.T))
    top = float(np.max(np.abs(ev))) if ev.size else 0.0
    ev = np.maximum(np.abs(ev), floor * top if top > 0 else 1.0)
    step = u @ ((u.T @ grad) / ev)
    big = float(np.max(np.abs(step))) if step.size else 0.0
    if big > cap:
        step *= cap / big
    return step


def _drop_set(grad: np.ndarray, hess: np.ndarray, M: int, value: float, options: OuterOptions) -> List[int]:
    gmax = float(np.max(np.abs(grad))) if grad.size else 0.0
    thresh = options.drop_tol * (1.0 + abs(value)) * max(1.0, gmax)
    return [i for i in range(M) if abs(grad[i]) < thresh and abs(hess[i, i]) < thresh]


def _converged(grad, hess, retained, value, options: OuterOptions) -> bool:
    if not retained:
        return True
    g = grad[retained]
    if float(np.max(np.abs(g))) >= options.tol * (1.0 + abs(value)):
        return False
    ev = np.linalg.eigvalsh(-hess[np.ix_(retained, retained)])
    top = float(np.max(np.abs(ev))) if ev.size else 0.0
    return bool(np.min(ev) >= -options.eigen_floor * max(top, 1e-300))


def _run_newton(
    lik,
    structure: PenaltyStructure,
    zeta: np.ndarray,
    M: int,
    options: OuterOptions,
) -> Tuple[FitState, LamlDerivs, OuterTrace]:
    trace = OuterTrace()
    zeta = _clamp(np.asarray(zeta, dtype=float))
    state = _fit(lik, structure, zeta, M, None, options)
    derivs = laml_grad_hess(state)
    if len(zeta) == 0:
        trace.converged = True
        return state, derivs, trace

    for it in range(options.max_iter):
        grad, hess, value = derivs.grad, derivs.hess, derivs.value
        dropped = _drop_set(grad, hess, M, value, options)
        retained = [i for i in range(len(zeta)) if i not in dropped]
        gnorm = float(np.max(np.abs(grad[retained]))) if retained else 0.0
        pending = [i for i in dropped if grad[i] >= 0.0 and zeta[i] < RHO_BOUND]
        stationary = _converged(grad, hess, retained, value, options)
        if not pending and stationary:
            trace.records.append(OuterRecord(it, value, gnorm, dropped, 0, zeta.tolist()))
            logger.info("outer %d: V=%.10g |grad|=%.3g dropped=%s converged", it, value, gnorm, dropped)
            trace.converged = True
            return state, derivs, trace

        base = zeta.copy()
        step = np.zeros_like(zeta)
        for i in dropped:
            if grad[i] >= 0.0:
                step[i] = RHO_BOUND - zeta[i]
        if retained and not stationary:
            step[retained] = _newton_step(
                grad[retained], hess[np.ix_(retained, retained)], options.eigen_floor, options.max_step
            )

        alpha, halvings = 1.0, 0
        accepted = None
        last_error: Optional[Exception] = None
        slack = 8.0 * np.finfo(float).eps * (1.0 + abs(value))
        while alpha >= options.min_step:
            trial = _clamp(base + alpha * step)
            try:
                trial_state = _fit(lik, structure, trial, M, state.beta, options)
                trial_value = laml_value(trial_state)
            except (DivergenceError, IndefiniteHessianError) as e:
                last_error = e
                trial_value = -np.inf
            if np.isfinite(trial_value) and trial_value >= value:
                accepted = (trial, trial_state, None)
                break
            if np.isfinite(trial_value) and trial_value >= value - slack:
                # level to rounding: take the step if it halves the gradient
                trial_derivs = laml_grad_hess(trial_state)
                trial_gnorm = float(np.max(np.abs(trial_derivs.grad[retained]))) if retained else 0.0
                if trial_gnorm <= 0.5 * gnorm:
                    accepted = (trial, trial_state, trial_derivs)
                    break
            alpha *= 0.5
            halvings += 1

        if accepted is None and stationary:
            # only the push of dropped parameters to the bound failed
            trace.records.append(OuterRecord(it, value, gnorm, dropped, 0, zeta.tolist()))
            logger.info("outer %d: V=%.10g |grad|=%.3g dropped=%s converged below the bound", it, value, gnorm, dropped)
            trace.converged = True
            return state, derivs, trace

        trace.records.append(OuterRecord(it, value, gnorm, dropped, halvings, zeta.tolist()))
        logger.info("outer %d: V=%.10g |grad|=%.3g dropped=%s halvings=%d", it, value, gnorm, dropped, halvings)

        if accepted is None:
            logger.warning("outer step could not increase V (|grad|=%.3g); stopping", gnorm)
            if isinstance(last_error, DivergenceError):
                raise DivergenceError(f"inner fit diverged at zeta={np.round(base + step, 4).tolist()}: {last_error}", state=last_error.state)
            raise OuterConvergenceError(
                f"outer iteration stalled at |grad|={gnorm:.3g}",
                trace=trace,
                result=(state, derivs, trace),
            )

        zeta, state, trial_derivs = accepted
        derivs = trial_derivs if trial_derivs is not None else laml_grad_hess(state)

    raise OuterConvergenceError(
        f"smoothing parameter optimization did not converge in {options.max_iter} iterations",
        trace=trace,
        result=(state, derivs, trace),
    )


def optimize(
    lik,
    structure: PenaltyStructure,
    rho_init: Optional[np.ndarray] = None,
    options: Optional[OuterOptions] = None,
) -> Tuple[FitState, LamlDerivs, OuterTrace]:
    """
    Maximize V over rho. Free extra parameters of the likelihood, if any,
    are optimized jointly from the family's starting values.
    """
    options = options or OuterOptions()
    psi0 = _psi_start(lik)
    rho = initial_rho(lik, structure, psi0) if rho_init is None else np.asarray(rho_init, dtype=float)
    return _run_newton(lik, structure, np.concatenate([rho, psi0]), len(rho), options)


def optimize_extended(
    lik,
    structure: PenaltyStructure,
    rho_init: Optional[np.ndarray] = None,
    psi_init: Optional[np.ndarray] = None,
    options: Optional[OuterOptions] = None,
) -> Tuple[FitState, LamlDerivs, OuterTrace]:
    """
    Joint Newton optimization over (rho, psi) for extended families.

    psi_init holds the free extra parameters (theta, log scale) in the
    family's order; fixed ones stay at the values bound to the likelihood.
    """
    options = options or OuterOptions()
    psi0 = _psi_start(lik) if psi_init is None else np.asarray(psi_init, dtype=float).reshape(lik.Q)
    rho = initial_rho(lik, structure, psi0) if rho_init is None else np.asarray(rho_init, dtype=float)
    return _run_newton(lik, structure, np.concatenate([rho, psi0]), len(rho), options)


def _psi_start(lik) -> np.ndarray:
    if lik.Q == 0:
        return np.zeros(0)
    return lik.psi_full[lik.free_index].copy()
