"""
app/core/families/extended.py - Negative binomial and beta regression families
"""

import logging
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.special import digamma, expit, gammaln, logit, polygamma, xlogy

from app.core.exceptions import DataError
from app.core.families.base import ObservationFamily, chain_log_parameter, filter_keys
from app.core.families.links import Link, LogitLink, LogLink

logger = logging.getLogger(__name__)


class NegativeBinomial(ObservationFamily):
    """
    Negative binomial with size k = exp(theta); theta -> infinity is Poisson.
    """

    name = "nb"
    psi_names = ["theta"]

    def __init__(self, link: Optional[Link] = None, theta=None, fix_theta: bool = False):
        psi = None if theta is None else np.atleast_1d(theta)
        super().__init__([link or LogLink()], psi, [bool(fix_theta)] if psi is not None else None)

    def check_response(self, y, event=None):
        super().check_response(y)
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise DataError("nb response must be non-negative integers")

    def _loglik(self, y, m, k):
        return (
            gammaln(y + k) - gammaln(k) - gammaln(y + 1.0)
            + k * np.log(k) + xlogy(y, m) - (y + k) * np.log(m + k)
        )

    def mu_derivatives(self, y, mu, psi, order=4, psi_order=2):
        m = mu[0]
        k = np.exp(psi[0]) * np.ones_like(m)
        s = m + k
        yk = y + k
        out = {(): self._loglik(y, m, k)}
        out[(0,)] = y / m - yk / s
        out[(0, 0)] = -y / m**2 + yk / s**2
        out[(0, 0, 0)] = 2.0 * y / m**3 - 2.0 * yk / s**3
        out[(0, 0, 0, 0)] = -6.0 * y / m**4 + 6.0 * yk / s**4
        if psi_order >= 1:
            out[(1,)] = digamma(yk) - digamma(k) + np.log(k) + 1.0 - np.log(s) - yk / s
            out[(0, 1)] = (y - m) / s**2
            out[(0, 0, 1)] = 1.0 / s**2 - 2.0 * yk / s**3
            out[(0, 0, 0, 1)] = -2.0 / s**3 + 6.0 * yk / s**4
        if psi_order >= 2:
            out[(1, 1)] = polygamma(1, yk) - polygamma(1, k) + 1.0 / k - 2.0 / s + yk / s**2
            out[(0, 1, 1)] = -2.0 * (y - m) / s**3
            out[(0, 0, 1, 1)] = -4.0 / s**3 + 6.0 * yk / s**4
        out = chain_log_parameter(out, 1, k)
        return filter_keys(out, 1, order, psi_order)

    def saturated_loglik(self, y, psi):
        k = np.exp(psi[0])
        return gammaln(y + k) - gammaln(k) - gammaln(y + 1.0) + k * np.log(k) + xlogy(y, y) - (y + k) * np.log(y + k)

    def initial_eta(self, y, weights):
        return [float(np.log(max(np.average(y, weights=weights), 1e-3)))]

    def initial_psi(self, y, weights):
        if self.psi_start is not None:
            return self.psi_start.copy()
        m, v = np.mean(y), np.var(y)
        k = m**2 / (v - m) if v > m * 1.01 else 100.0
        return np.array([np.log(np.clip(k, 1e-2, 1e6))])

    def sample(self, eta, psi, rng):
        m = self.links[0].inverse(eta[0])
        k = np.exp(psi[0])
        return rng.negative_binomial(k, k / (k + m)).astype(float)


class Beta(ObservationFamily):
    """
    Beta regression for responses in (0, 1); theta is the log precision.
    """

    name = "beta"
    psi_names = ["theta"]

    def __init__(self, link: Optional[Link] = None, theta=None, fix_theta: bool = False):
        psi = None if theta is None else np.atleast_1d(theta)
        super().__init__([link or LogitLink()], psi, [bool(fix_theta)] if psi is not None else None)

    def check_response(self, y, event=None):
        super().check_response(y)
        if np.any(y <= 0) or np.any(y >= 1):
            raise DataError("beta response must lie strictly inside (0, 1)")

    @staticmethod
    def _loglik(y, m, phi):
        a, b = m * phi, (1.0 - m) * phi
        return gammaln(phi) - gammaln(a) - gammaln(b) + (a - 1.0) * np.log(y) + (b - 1.0) * np.log1p(-y)

    def mu_derivatives(self, y, mu, psi, order=4, psi_order=2):
        m = mu[0]
        phi = np.exp(psi[0]) * np.ones_like(m)
        a, b = m * phi, (1.0 - m) * phi
        ystar = np.log(y) - np.log1p(-y)
        t0 = ystar - digamma(a) + digamma(b)
        p1a, p1b = polygamma(1, a), polygamma(1, b)
        p2a, p2b = polygamma(2, a), polygamma(2, b)
        p3a, p3b = polygamma(3, a), polygamma(3, b)
        out = {(): self._loglik(y, m, phi)}
        out[(0,)] = phi * t0
        out[(0, 0)] = -phi**2 * (p1a + p1b)
        out[(0, 0, 0)] = -phi**3 * (p2a - p2b)
        out[(0, 0, 0, 0)] = -phi**4 * (p3a + p3b)
        if psi_order >= 1:
            out[(1,)] = (
                digamma(phi) - m * digamma(a) - (1.0 - m) * digamma(b)
                + m * np.log(y) + (1.0 - m) * np.log1p(-y)
            )
            out[(0, 1)] = t0 + phi * (-m * p1a + (1.0 - m) * p1b)
            out[(0, 0, 1)] = -2.0 * phi * (p1a + p1b) - phi**2 * (m * p2a + (1.0 - m) * p2b)
            out[(0, 0, 0, 1)] = -3.0 * phi**2 * (p2a - p2b) - phi**3 * (m * p3a - (1.0 - m) * p3b)
        if psi_order >= 2:
            out[(1, 1)] = polygamma(1, phi) - m**2 * p1a - (1.0 - m) ** 2 * p1b
            out[(0, 1, 1)] = 2.0 * (-m * p1a + (1.0 - m) * p1b) + phi * (-(m**2) * p2a + (1.0 - m) ** 2 * p2b)
            out[(0, 0, 1, 1)] = (
                -2.0 * (p1a + p1b)
                - 4.0 * phi * (m * p2a + (1.0 - m) * p2b)
                - phi**2 * (m**2 * p3a + (1.0 - m) ** 2 * p3b)
            )
        out = chain_log_parameter(out, 1, phi)
        return filter_keys(out, 1, order, psi_order)

    def saturated_loglik(self, y, psi):
        """Per-observation maximum over the mean, found by Newton on the logit scale"""
        phi = float(np.exp(psi[0]))
        ystar = np.log(y) - np.log1p(-y)

        def score(u):
            m = expit(u)
            return digamma(m * phi) - digamma((1.0 - m) * phi) - ystar

        def slope(u):
            m = expit(u)
            return phi * m * (1.0 - m) * (polygamma(1, m * phi) + polygamma(1, (1.0 - m) * phi))

        u = optimize.newton(score, logit(y), fprime=slope, maxiter=100, tol=1e-12)
        m = np.clip(expit(u), 1e-14, 1.0 - 1e-14)
        return self._loglik(y, m, phi)

    def initial_eta(self, y, weights):
        return [float(self.links[0].linkfun(np.average(y, weights=weights)))]

    def initial_psi(self, y, weights):
        if self.psi_start is not None:
            return self.psi_start.copy()
        m, v = np.mean(y), np.var(y)
        phi = m * (1.0 - m) / v - 1.0 if v > 0 else 10.0
        return np.array([np.log(np.clip(phi, 0.1, 1e6))])

    def sample(self, eta, psi, rng):
        m = self.links[0].inverse(eta[0])
        phi = np.exp(psi[0])
        y = rng.beta(m * phi, (1.0 - m) * phi)
        return np.clip(y, 1e-10, 1.0 - 1e-10)
