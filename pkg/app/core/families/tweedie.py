"""
app/core/families/tweedie.py - Tweedie family with estimated power parameter

The density for y > 0 is a(y, phi, p) exp{(y mu^(1-p)/(1-p) - mu^(2-p)/(2-p))/phi}
with a = W/y and W an infinite series summed outwards from its largest term.
Power p lives in (a, b) through p = (a + b e^theta)/(1 + e^theta).
"""

import logging
from math import comb
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import digamma, expit, gammaln, logsumexp, polygamma

from app.core.exceptions import DataError
from app.core.families.base import ObservationFamily, chain_parameter
from app.core.families.links import DerivDict, LogLink

logger = logging.getLogger(__name__)

SERIES_CUTOFF = 37.0


def _falling(a: int, i: int) -> float:
    out = 1.0
    for j in range(i):
        out *= a - j
    return out


def _g(r: int, q: int, c: float, eta: np.ndarray) -> np.ndarray:
    """q-th derivative in c of c^(r-1) exp(c eta)"""
    e = np.exp(c * eta)
    total = np.zeros_like(eta)
    for i in range(q + 1):
        total = total + comb(q, i) * _falling(r - 1, i) * c ** (r - 1 - i) * eta ** (q - i)
    return total * e


def _series_terms(y: np.ndarray, p: float, s: float) -> Tuple[np.ndarray, np.ndarray]:
    """Index grid and log W_j for every retained term; masked entries are -inf"""
    alpha = (2.0 - p) / (1.0 - p)
    L = -alpha * np.log(y) + alpha * np.log(p - 1.0) - s / (p - 1.0) - np.log(2.0 - p)

    def log_term(j):
        return j * L - gammaln(j + 1.0) - gammaln(-j * alpha)

    jmax = np.maximum(1.0, np.round(y ** (2.0 - p) / (np.exp(s) * (2.0 - p))))
    top = log_term(jmax)
    hi = jmax.copy()
    grow = log_term(hi) > top - SERIES_CUTOFF
    while np.any(grow):
        hi = np.where(grow, hi * 2.0, hi)
        grow = grow & (log_term(hi) > top - SERIES_CUTOFF)
    lo = jmax.copy()
    shrink = (lo > 1.0) & (log_term(lo) > top - SERIES_CUTOFF)
    while np.any(shrink):
        lo = np.where(shrink, np.maximum(1.0, np.floor(lo / 2.0)), lo)
        shrink = shrink & (lo > 1.0) & (log_term(lo) > top - SERIES_CUTOFF)
    width = int(np.max(hi - lo)) + 1
    j = lo[:, None] + np.arange(width)[None, :]
    valid = j <= hi[:, None]
    lw = np.where(valid, j * L[:, None] - gammaln(j + 1.0) - gammaln(-j * alpha), -np.inf)
    return np.where(valid, j, 0.0), lw


def tweedie_series(y: np.ndarray, phi: float, p: float, psi_order: int = 0) -> Dict[Tuple[int, ...], np.ndarray]:
    """
    log W and its derivatives in (p, log phi) for positive y.

    Keys use 0 for p and 1 for log phi. Derivatives are weighted moments of
    the per-term derivatives, with weights W_j / W.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    s = float(np.log(phi))
    j, lw = _series_terms(y, p, s)
    logw = logsumexp(lw, axis=1)
    out = {(): logw}
    if psi_order == 0:
        return out
    w = np.exp(lw - logw[:, None])
    alpha = (2.0 - p) / (1.0 - p)
    a1 = 1.0 / (1.0 - p) ** 2
    a2 = 2.0 / (1.0 - p) ** 3
    logy = np.log(y)[:, None]
    lp = (
        -a1 * logy + a1 * np.log(p - 1.0) + alpha / (p - 1.0)
        + s / (p - 1.0) ** 2 + 1.0 / (2.0 - p)
    )
    arg = np.where(j > 0, -j * alpha, 1.0)
    d_p = j * lp + j * a1 * digamma(arg)
    d_s = -j / (p - 1.0)
    m_p = np.sum(w * d_p, axis=1)
    m_s = np.sum(w * d_s, axis=1)
    out[(0,)] = m_p
    out[(1,)] = m_s
    if psi_order >= 2:
        lpp = (
            -a2 * logy + a2 * np.log(p - 1.0) + 2.0 * a1 / (p - 1.0)
            - alpha / (p - 1.0) ** 2 - 2.0 * s / (p - 1.0) ** 3 + 1.0 / (2.0 - p) ** 2
        )
        d_pp = j * lpp + j * a2 * digamma(arg) - j**2 * a1**2 * polygamma(1, arg)
        d_ps = j / (p - 1.0) ** 2
        out[(0, 0)] = np.sum(w * (d_pp + d_p**2), axis=1) - m_p**2
        out[(0, 1)] = np.sum(w * (d_ps + d_p * d_s), axis=1) - m_p * m_s
        out[(1, 1)] = np.sum(w * d_s**2, axis=1) - m_s**2
    return out


def tweedie_logdensity(y: np.ndarray, mu: np.ndarray, phi: float, p: float) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), y.shape)
    out = (y * mu ** (1.0 - p) / (1.0 - p) - mu ** (2.0 - p) / (2.0 - p)) / phi
    pos = y > 0
    if np.any(pos):
        out = out.copy()
        out[pos] += tweedie_series(y[pos], phi, p)[()] - np.log(y[pos])
    return out


class Tweedie(ObservationFamily):
    """Log-link Tweedie; extra parameters are (theta, log phi)"""

    name = "tw"
    psi_names = ["theta", "log_scale"]

    def __init__(self, a: float = 1.01, b: float = 1.99, theta=None, fix_theta: bool = False, scale: Optional[float] = None):
        if not 1.0 < a < b < 2.0:
            raise DataError(f"tweedie power bounds must satisfy 1 < a < b < 2, got ({a}, {b})")
        self.a, self.b = float(a), float(b)
        psi = None
        if theta is not None or scale is not None:
            psi = [np.nan, np.nan]
            if theta is not None:
                psi[0] = float(np.atleast_1d(theta)[0])
            if scale is not None:
                psi[1] = float(np.log(scale))
        fixed = [bool(fix_theta) and theta is not None, scale is not None]
        super().__init__([LogLink()], psi, fixed)

    def power(self, theta: float) -> Tuple[float, float, float]:
        """p with dp/dtheta and d2p/dtheta2"""
        sig = float(expit(theta))
        span = self.b - self.a
        return self.a + span * sig, span * sig * (1.0 - sig), span * sig * (1.0 - sig) * (1.0 - 2.0 * sig)

    def scale(self, psi):
        return float(np.exp(psi[1]))

    def check_response(self, y, event=None):
        super().check_response(y)
        if np.any(y < 0):
            raise DataError("tweedie response must be non-negative")

    def eta_derivatives(self, y, eta, psi, order=4, psi_order=2) -> DerivDict:
        eta0 = np.asarray(eta[0], dtype=float)
        p, p1, p2 = self.power(psi[0])
        s = float(psi[1])
        inv_phi = np.exp(-s)
        pos = y > 0
        top = max(order, psi_order)
        series = tweedie_series(y[pos], np.exp(s), p, psi_order) if np.any(pos) else {}

        out: DerivDict = {}
        for r in range(order + 1):
            for q in range(psi_order + 1):
                for t in range(psi_order + 1 - q):
                    if r + q + t > top:
                        continue
                    sign = (-1.0) ** (q + t)
                    val = sign * inv_phi * (y * _g(r, q, 1.0 - p, eta0) - _g(r, q, 2.0 - p, eta0))
                    if r == 0 and series:
                        add = series.get((0,) * q + (1,) * t)
                        if add is not None:
                            val = val.copy()
                            val[pos] += add - (np.log(y[pos]) if q + t == 0 else 0.0)
                    out[(0,) * r + (1,) * q + (2,) * t] = val
        return chain_parameter(out, 1, p1, p2)

    def loglik(self, y, eta, psi):
        p, _, _ = self.power(psi[0])
        return tweedie_logdensity(y, np.exp(eta[0]), self.scale(psi), p)

    def saturated_loglik(self, y, psi):
        p, _, _ = self.power(psi[0])
        out = np.zeros_like(y, dtype=float)
        pos = y > 0
        out[pos] = tweedie_logdensity(y[pos], y[pos], self.scale(psi), p)
        return out

    def deviance(self, y, eta, psi, weights=None):
        p, _, _ = self.power(psi[0])
        mu = np.exp(eta[0])
        w = np.ones_like(y) if weights is None else weights
        unit = (
            y ** (2.0 - p) / ((1.0 - p) * (2.0 - p))
            - y * mu ** (1.0 - p) / (1.0 - p)
            + mu ** (2.0 - p) / (2.0 - p)
        )
        return float(2.0 * np.sum(w * unit))

    def initial_eta(self, y, weights):
        return [float(np.log(max(np.average(y, weights=weights), 1e-3)))]

    def initial_psi(self, y, weights):
        start = np.array([np.nan, np.nan]) if self.psi_start is None else self.psi_start.copy()
        if np.isnan(start[0]):
            start[0] = 0.0
        if np.isnan(start[1]):
            p, _, _ = self.power(start[0])
            m = max(np.mean(y), 1e-3)
            start[1] = np.log(max(np.mean((y - m) ** 2) / m**p, 1e-3))
        return start

    def sample(self, eta, psi, rng):
        p, _, _ = self.power(psi[0])
        phi = self.scale(psi)
        mu = np.exp(eta[0])
        lam = mu ** (2.0 - p) / (phi * (2.0 - p))
        shape = (2.0 - p) / (p - 1.0)
        gscale = phi * (p - 1.0) * mu ** (p - 1.0)
        counts = rng.poisson(lam)
        y = np.zeros_like(mu)
        hit = counts > 0
        y[hit] = rng.gamma(counts[hit] * shape, gscale[hit])
        return y
