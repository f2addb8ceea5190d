"""
app/core/families/gaulss.py - Gaussian location-scale family
"""

import logging

import numpy as np

from app.core.families.base import ObservationFamily
from app.core.families.links import DerivDict, IdentityLink, LogLink

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


class GaussianLocationScale(ObservationFamily):
    """
    y ~ N(mu, sigma^2) with mu = eta_1 and log sigma = eta_2.

    Derivatives are taken directly in (eta_1, eta_2): with tau = eta_2 and
    r = y - mu the log density is -r^2 exp(-2 tau)/2 - tau - log(2 pi)/2.
    """

    name = "gaulss"

    def __init__(self):
        super().__init__([IdentityLink(), LogLink()])

    def eta_derivatives(self, y, eta, psi, order=4, psi_order=2) -> DerivDict:
        mu = np.asarray(eta[0], dtype=float)
        tau = np.asarray(eta[1], dtype=float)
        r = y - mu
        prec = np.exp(-2.0 * tau)
        out: DerivDict = {(): -0.5 * r**2 * prec - tau - 0.5 * LOG_2PI}
        for b in range(order + 1):
            f = (-2.0) ** b * prec
            if b >= 1:
                val = -0.5 * r**2 * f
                if b == 1:
                    val = val - 1.0
                out[(1,) * b] = val
            if 1 + b <= order:
                out[(0,) + (1,) * b] = r * f
            if 2 + b <= order:
                out[(0, 0) + (1,) * b] = -f
        return out

    def loglik(self, y, eta, psi):
        return self.eta_derivatives(y, eta, psi, order=0)[()]

    def deviance(self, y, eta, psi, weights=None):
        w = np.ones_like(y) if weights is None else weights
        return float(np.sum(w * (y - eta[0]) ** 2 * np.exp(-2.0 * eta[1])))

    def initial_eta(self, y, weights):
        mean = np.average(y, weights=weights)
        sd = np.sqrt(np.average((y - mean) ** 2, weights=weights))
        return [float(mean), float(np.log(max(sd, 1e-8)))]

    def response_mean(self, eta, psi):
        return np.asarray(eta[0], dtype=float)

    def sample(self, eta, psi, rng):
        return rng.normal(eta[0], np.exp(eta[1]))
