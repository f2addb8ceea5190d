"""
app/core/families/zip.py - Zero-inflated Poisson families

Both families use a hurdle form: presence has probability p = 1 - exp(-e^eta)
and a present count follows a zero-truncated Poisson with log mean gamma.
The two-predictor version fits gamma and eta separately; the single-predictor
version ties them through eta = theta_1 + exp(theta_2) gamma.
"""

import logging
from typing import List

import numpy as np
from scipy import optimize, stats
from scipy.special import gammaln

from app.core.exceptions import DataError
from app.core.families.base import ObservationFamily, compose, derivative_keys
from app.core.families.links import DerivDict, IdentityLink

logger = logging.getLogger(__name__)

SERIES_SWITCH = 0.01
# Taylor coefficients of t / (e^t - 1)
_Q_COEF = {0: 1.0, 1: -0.5, 2: 1.0 / 12.0, 4: -1.0 / 720.0, 6: 1.0 / 30240.0, 8: -1.0 / 1209600.0}


def q_chain(t: np.ndarray) -> List[np.ndarray]:
    """
    q = t / (e^t - 1) and its first three derivatives in log t.

    Below a small threshold the Taylor series is used; elsewhere the
    recursion q' = q (1 - t - q) and its derivatives.
    """
    t = np.asarray(t, dtype=float)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        q = np.where(t > 0, t / np.expm1(t), 1.0)
    a = 1.0 - t - q
    q1 = q * a
    b = -t - q1
    q2 = q1 * a + q * b
    q3 = q2 * a + 2.0 * q1 * b + q * (-t - q2)
    out = [q, q1, q2, q3]
    small = t < SERIES_SWITCH
    if np.any(small):
        ts = t[small]
        for k in range(4):
            series = sum(c * n**k * ts**n for n, c in _Q_COEF.items())
            out[k] = out[k].copy()
            out[k][small] = series
    return out


def presence_derivatives(y: np.ndarray, eta: np.ndarray) -> List[np.ndarray]:
    """Presence part of l and four derivatives in eta"""
    t = np.exp(eta)
    zero = y == 0
    q, q1, q2, q3 = q_chain(t)
    with np.errstate(divide="ignore"):
        present = np.log(-np.expm1(-t))
    out = [present, q, q1, q2, q3]
    return [np.where(zero, -t, d) for d in out]


def count_derivatives(y: np.ndarray, gamma: np.ndarray) -> List[np.ndarray]:
    """Zero-truncated Poisson part of l and four derivatives in gamma"""
    lam = np.exp(gamma)
    q, q1, q2, q3 = q_chain(lam)
    with np.errstate(divide="ignore"):
        value = y * gamma - lam - np.log(-np.expm1(-lam)) - gammaln(y + 1.0)
    out = [value, y - lam - q, -lam - q1, -lam - q2, -lam - q3]
    zero = y == 0
    return [np.where(zero, 0.0, d) for d in out]


def _saturated_counts(y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y, dtype=float)
    many = y > 1
    if np.any(many):
        yy = y[many]

        def score(g):
            lam = np.exp(g)
            return yy - lam - q_chain(lam)[0]

        def slope(g):
            lam = np.exp(g)
            return -(lam + q_chain(lam)[1])

        g = optimize.newton(score, np.log(yy), fprime=slope, maxiter=100, tol=1e-12)
        out[many] = count_derivatives(yy, g)[0]
    return out


def _check_counts(name: str, y: np.ndarray) -> None:
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise DataError(f"{name} response must be non-negative integers")


def _hurdle_mean(gamma: np.ndarray, eta: np.ndarray) -> np.ndarray:
    lam = np.exp(gamma)
    p = -np.expm1(-np.exp(eta))
    return p * (lam + q_chain(lam)[0])


def _hurdle_sample(gamma: np.ndarray, eta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    lam = np.exp(gamma)
    p = -np.expm1(-np.exp(eta))
    present = rng.random(len(lam)) < p
    u = rng.uniform(np.exp(-lam), 1.0)
    counts = np.maximum(1.0, stats.poisson.ppf(u, lam))
    return np.where(present, counts, 0.0)


class ZiplssFamily(ObservationFamily):
    """Two predictors: gamma (log Poisson mean) and eta (presence, cloglog scale)"""

    name = "ziplss"

    def __init__(self):
        super().__init__([IdentityLink(), IdentityLink()])

    def check_response(self, y, event=None):
        super().check_response(y)
        _check_counts(self.name, y)

    def eta_derivatives(self, y, eta, psi, order=4, psi_order=2) -> DerivDict:
        lz = count_derivatives(y, np.asarray(eta[0], dtype=float))
        lp = presence_derivatives(y, np.asarray(eta[1], dtype=float))
        out: DerivDict = {(): lz[0] + lp[0]}
        for r in range(1, order + 1):
            out[(0,) * r] = lz[r]
            out[(1,) * r] = lp[r]
        return out

    def saturated_loglik(self, y, psi):
        return _saturated_counts(y)

    def initial_eta(self, y, weights):
        pos = y > 0
        mean_pos = np.mean(y[pos]) if np.any(pos) else 1.0
        p = np.clip(np.average(pos, weights=weights), 0.01, 0.99)
        return [float(np.log(max(mean_pos - 0.5, 0.1))), float(np.log(-np.log1p(-p)))]

    def response_mean(self, eta, psi):
        return _hurdle_mean(eta[0], eta[1])

    def sample(self, eta, psi, rng):
        return _hurdle_sample(eta[0], eta[1], rng)


class ZipFamily(ObservationFamily):
    """
    Single predictor gamma with eta = theta_1 + exp(theta_2) gamma.

    theta = (0, 0) recovers the Poisson model.
    """

    name = "ziP"
    psi_names = ["theta1", "theta2"]

    def __init__(self, theta=None, fix_theta: bool = False):
        psi = None if theta is None else np.atleast_1d(theta)
        super().__init__([IdentityLink()], psi, [bool(fix_theta)] * 2 if psi is not None else None)

    def check_response(self, y, event=None):
        super().check_response(y)
        _check_counts(self.name, y)

    def presence_eta(self, gamma: np.ndarray, psi: np.ndarray) -> np.ndarray:
        return psi[0] + np.exp(psi[1]) * gamma

    def eta_derivatives(self, y, eta, psi, order=4, psi_order=2) -> DerivDict:
        gamma = np.asarray(eta[0], dtype=float)
        e2 = np.exp(psi[1])
        lz = count_derivatives(y, gamma)
        lp = presence_derivatives(y, self.presence_eta(gamma, psi))
        ones = np.ones_like(gamma)

        def inner(block):
            if block == (1,):
                return ones
            if 1 in block:
                return None
            a = block.count(0)
            if a == 0:
                return e2 * gamma
            if a == 1:
                return e2 * ones
            return None

        out: DerivDict = {}
        for key in derivative_keys(1, 2, order, psi_order):
            val = compose(lp, inner, key)
            if key and all(k == 0 for k in key):
                val = lz[len(key)] if val is None else val + lz[len(key)]
            elif not key:
                val = lz[0] + lp[0]
            if val is not None:
                out[key] = val
        return out

    def loglik(self, y, eta, psi):
        return self.eta_derivatives(y, eta, psi, order=0, psi_order=0)[()]

    def saturated_loglik(self, y, psi):
        return _saturated_counts(y)

    def initial_eta(self, y, weights):
        pos = y > 0
        return [float(np.log(max(np.mean(y[pos]) if np.any(pos) else 1.0, 0.1)))]

    def response_mean(self, eta, psi):
        return _hurdle_mean(eta[0], self.presence_eta(eta[0], psi))

    def sample(self, eta, psi, rng):
        return _hurdle_sample(eta[0], self.presence_eta(eta[0], psi), rng)
