"""
app/core/families/exponential.py - Gaussian, Poisson and binomial baselines
"""

import logging
from typing import List, Optional

import numpy as np
from scipy.special import gammaln, xlogy

from app.core.exceptions import DataError
from app.core.families.base import ObservationFamily
from app.core.families.links import IdentityLink, Link, LogLink, LogitLink, get_link

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


class Gaussian(ObservationFamily):
    """
    Normal response. The extra parameter is log variance unless a known
    scale is given, in which case the family has no extra parameters.
    """

    name = "gaussian"

    def __init__(self, link: Optional[Link] = None, scale: Optional[float] = None, theta=None, fix_theta: bool = False):
        self.known_scale = None if scale is None else float(scale)
        self.psi_names = [] if self.known_scale is not None else ["log_scale"]
        psi = None if theta is None or self.known_scale is not None else np.atleast_1d(theta)
        fixed = [bool(fix_theta)] if psi is not None else None
        super().__init__([link or IdentityLink()], psi, fixed)

    def scale(self, psi):
        if self.known_scale is not None:
            return self.known_scale
        return float(np.exp(psi[0]))

    def mu_derivatives(self, y, mu, psi, order=4, psi_order=2):
        r = y - mu[0]
        if self.known_scale is not None:
            inv = 1.0 / self.known_scale
            out = {(): -0.5 * r**2 * inv - 0.5 * (LOG_2PI + np.log(self.known_scale))}
            if order >= 1:
                out[(0,)] = r * inv
            if order >= 2:
                out[(0, 0)] = np.full_like(r, -inv)
            return out
        inv = np.exp(-psi[0])
        ones = np.ones_like(r)
        out = {(): -0.5 * r**2 * inv - 0.5 * (LOG_2PI + psi[0])}
        if order >= 1:
            out[(0,)] = r * inv
        if order >= 2:
            out[(0, 0)] = -inv * ones
        if psi_order >= 1:
            out[(1,)] = 0.5 * r**2 * inv - 0.5
            out[(0, 1)] = -r * inv
            out[(0, 0, 1)] = inv * ones
        if psi_order >= 2:
            out[(1, 1)] = -0.5 * r**2 * inv
            out[(0, 1, 1)] = r * inv
            out[(0, 0, 1, 1)] = -inv * ones
        return out

    def saturated_loglik(self, y, psi):
        return np.full_like(y, -0.5 * (LOG_2PI + np.log(self.scale(psi))), dtype=float)

    def initial_eta(self, y, weights):
        return [float(self.links[0].linkfun(np.average(y, weights=weights)))]

    def initial_psi(self, y, weights):
        if self.known_scale is not None:
            return np.zeros(0)
        if self.psi_start is not None:
            return self.psi_start.copy()
        return np.array([np.log(max(np.var(y), 1e-8))])

    def sample(self, eta, psi, rng):
        mu = self.links[0].inverse(eta[0])
        return rng.normal(mu, np.sqrt(self.scale(psi)))


class Poisson(ObservationFamily):
    name = "poisson"

    def __init__(self, link: Optional[Link] = None):
        super().__init__([link or LogLink()])

    def check_response(self, y, event=None):
        super().check_response(y)
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise DataError("poisson response must be non-negative integers")

    def mu_derivatives(self, y, mu, psi, order=4, psi_order=2):
        m = mu[0]
        out = {(): xlogy(y, m) - m - gammaln(y + 1.0)}
        if order >= 1:
            out[(0,)] = y / m - 1.0
        if order >= 2:
            out[(0, 0)] = -y / m**2
        if order >= 3:
            out[(0, 0, 0)] = 2.0 * y / m**3
        if order >= 4:
            out[(0, 0, 0, 0)] = -6.0 * y / m**4
        return out

    def saturated_loglik(self, y, psi):
        return xlogy(y, y) - y - gammaln(y + 1.0)

    def initial_eta(self, y, weights):
        return [float(self.links[0].linkfun(max(np.average(y, weights=weights), 1e-3)))]

    def sample(self, eta, psi, rng):
        return rng.poisson(self.links[0].inverse(eta[0])).astype(float)


class Binomial(ObservationFamily):
    """Binary or proportion response with logit or complementary log-log link"""

    name = "binomial"

    def __init__(self, link: Optional[Link] = None):
        link = link or LogitLink()
        if isinstance(link, str):
            link = get_link(link)
        super().__init__([link])

    def check_response(self, y, event=None):
        super().check_response(y)
        if np.any(y < 0) or np.any(y > 1):
            raise DataError("binomial response must lie in [0, 1]")

    def mu_derivatives(self, y, mu, psi, order=4, psi_order=2):
        m = mu[0]
        n = 1.0 - m
        out = {(): xlogy(y, m) + xlogy(1.0 - y, n)}
        if order >= 1:
            out[(0,)] = y / m - (1.0 - y) / n
        if order >= 2:
            out[(0, 0)] = -y / m**2 - (1.0 - y) / n**2
        if order >= 3:
            out[(0, 0, 0)] = 2.0 * y / m**3 - 2.0 * (1.0 - y) / n**3
        if order >= 4:
            out[(0, 0, 0, 0)] = -6.0 * y / m**4 - 6.0 * (1.0 - y) / n**4
        return out

    def saturated_loglik(self, y, psi):
        return xlogy(y, y) + xlogy(1.0 - y, 1.0 - y)

    def initial_eta(self, y, weights):
        p = np.clip(np.average(y, weights=weights), 0.01, 0.99)
        return [float(self.links[0].linkfun(p))]

    def sample(self, eta, psi, rng):
        return rng.binomial(1, self.links[0].inverse(eta[0])).astype(float)


def exponential_families() -> List[ObservationFamily]:
    """Default-link instances of the three baseline families"""
    return [Gaussian(), Poisson(), Binomial()]
