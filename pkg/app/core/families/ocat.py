"""
app/core/families/ocat.py - Ordered categorical family with a logistic latent variable
"""

import logging
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import expit, logit

from app.core.exceptions import DataError
from app.core.families.base import ObservationFamily, compose, derivative_keys
from app.core.families.links import DerivDict, IdentityLink

logger = logging.getLogger(__name__)

TINY = 1e-300


def cut_points(theta: np.ndarray) -> np.ndarray:
    """alpha_1 = -1 and alpha_{j+1} = alpha_j + exp(theta_j), so the cuts are always ordered"""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return np.concatenate([[-1.0], -1.0 + np.cumsum(np.exp(theta))])


def _logistic_derivatives(u: np.ndarray):
    F = expit(u)
    G = expit(-u)
    fg = F * G
    return [F, fg, fg * (G - F), fg * (1.0 - 6.0 * fg), fg * (G - F) * (1.0 - 12.0 * fg)]


def ocat_probabilities(eta: np.ndarray, theta: np.ndarray, R: int) -> np.ndarray:
    """Category probabilities, one row per observation"""
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    alpha = cut_points(theta)
    if len(alpha) != R - 1:
        raise DataError(f"ocat with R={R} needs {R - 2} theta values")
    upper = np.column_stack([expit(a - eta) for a in alpha] + [np.ones_like(eta)])
    lower = np.column_stack([np.zeros_like(eta)] + [expit(a - eta) for a in alpha])
    probs = upper - lower
    # upper-tail differences are formed from the complementary CDF
    for r in range(1, R):
        u0 = alpha[r - 1] - eta
        tail = u0 > 0
        if np.any(tail):
            g_hi = expit(-(alpha[r] - eta[tail])) if r < R - 1 else np.zeros(int(tail.sum()))
            probs[tail, r] = expit(-u0[tail]) - g_hi
    return probs


class OrderedCategorical(ObservationFamily):
    """
    y in 1..R with Pr(y <= r) = F(alpha_r - eta), F logistic.

    Extra parameters theta_1..theta_{R-2} give the cut point spacings.
    """

    name = "ocat"

    def __init__(self, R: int = 3, theta=None, fix_theta: bool = False):
        if int(R) < 3:
            raise DataError("ocat needs at least 3 categories")
        self.R = int(R)
        self.psi_names = [f"theta{j + 1}" for j in range(self.R - 2)]
        psi = None if theta is None else np.atleast_1d(theta)
        fixed = [bool(fix_theta)] * (self.R - 2) if psi is not None else None
        super().__init__([IdentityLink()], psi, fixed)

    def check_response(self, y, event=None):
        super().check_response(y)
        if np.any(y != np.round(y)) or np.any(y < 1) or np.any(y > self.R):
            raise DataError(f"ocat response must be integer labels 1..{self.R}")

    def _cuts(self, y: np.ndarray, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        alpha = np.concatenate([[-np.inf], cut_points(theta), [np.inf]])
        r = y.astype(int)
        return alpha[r], alpha[r - 1]

    def eta_derivatives(self, y, eta, psi, order=4, psi_order=2) -> DerivDict:
        eta0 = np.asarray(eta[0], dtype=float)
        theta = np.asarray(psi, dtype=float)
        r = y.astype(int)
        hi_cut, lo_cut = self._cuts(y, theta)
        u1, u0 = hi_cut - eta0, lo_cut - eta0
        F1, F0 = _logistic_derivatives(u1), _logistic_derivatives(u0)
        D = np.where(u0 > 0, expit(-u0) - expit(-u1), F1[0] - F0[0])
        D = np.maximum(D, TINY)
        etheta = np.exp(theta)
        minus_one = -np.ones_like(eta0)

        def inner_for(cut_index: np.ndarray):
            def inner(block):
                if block == (0,):
                    return minus_one
                if block[0] >= 1 and all(b == block[0] for b in block):
                    j = block[0]
                    return np.where(j <= cut_index - 1, etheta[j - 1], 0.0)
                return None

            return inner

        inner_hi, inner_lo = inner_for(r), inner_for(r - 1)
        d_cache: Dict[Tuple[int, ...], Optional[np.ndarray]] = {}

        def d_of(block):
            if block not in d_cache:
                a = compose(F1, inner_hi, block)
                b = compose(F0, inner_lo, block)
                if a is None and b is None:
                    d_cache[block] = None
                else:
                    a = 0.0 if a is None else np.nan_to_num(a)
                    b = 0.0 if b is None else np.nan_to_num(b)
                    d_cache[block] = a - b
            return d_cache[block]

        log_outer = [np.log(D), 1.0 / D, -1.0 / D**2, 2.0 / D**3, -6.0 / D**4]
        out: DerivDict = {(): np.log(D)}
        for key in derivative_keys(1, self.R - 2, order, psi_order):
            if not key:
                continue
            val = compose(log_outer, d_of, key)
            if val is not None:
                out[key] = val
        return out

    def loglik(self, y, eta, psi):
        return self.eta_derivatives(y, eta, psi, order=0, psi_order=0)[()]

    def saturated_loglik(self, y, psi):
        """Best achievable log probability of each observed category"""
        alpha = cut_points(psi)
        r = y.astype(int)
        out = np.zeros_like(y, dtype=float)
        middle = (r > 1) & (r < self.R)
        if np.any(middle):
            half = 0.5 * (alpha[r[middle] - 1] - alpha[r[middle] - 2])
            out[middle] = np.log(expit(half) - expit(-half))
        return out

    def initial_eta(self, y, weights):
        c1 = np.clip(np.average(y <= 1, weights=weights), 1e-3, 1.0 - 1e-3)
        return [float(-1.0 - logit(c1))]

    def initial_psi(self, y, weights):
        if self.psi_start is not None:
            return self.psi_start.copy()
        cum = np.array([np.average(y <= r, weights=weights) for r in range(1, self.R)])
        emp = logit(np.clip(cum, 1e-3, 1.0 - 1e-3))
        emp = emp - emp[0] - 1.0
        return np.log(np.maximum(np.diff(emp), 1e-2))

    def response_mean(self, eta, psi):
        probs = ocat_probabilities(eta[0], psi, self.R)
        return probs @ np.arange(1, self.R + 1)

    def sample(self, eta, psi, rng):
        alpha = cut_points(psi)
        latent = eta[0] + rng.logistic(size=len(eta[0]))
        return 1.0 + np.sum(latent[:, None] > alpha[None, :], axis=1).astype(float)
