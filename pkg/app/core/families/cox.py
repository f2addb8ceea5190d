"""
app/core/families/cox.py - Cox proportional hazards partial likelihood with Breslow ties

Observations are sorted by non-increasing time so every risk set is a prefix
of the sorted rows. Risk set sums are then cumulative sums, and sums over
the events whose risk set contains a row are reverse cumulative sums.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from app.core.exceptions import DataError, InitializationError
from app.core.families.base import Family
from app.core.likelihood import LikelihoodPoint

logger = logging.getLogger(__name__)


class CoxPH(Family):
    name = "coxph"
    n_predictors = 1
    absorbs_intercept = True
    is_general = True
    n_psi = 0
    psi_names: List[str] = []
    uses_pirls = False

    def check_response(self, y, event=None):
        super().check_response(y)
        if event is None:
            raise DataError("coxph needs an event indicator column")
        if np.any((event != 0) & (event != 1)):
            raise DataError("coxph event indicator must be 0 or 1")
        if not np.any(event == 1):
            raise DataError("coxph partial likelihood is degenerate: every observation is censored")

    def likelihood(self, X, offset, times, event, weights=None) -> "CoxLikelihood":
        self.check_response(np.asarray(times, dtype=float), np.asarray(event, dtype=float))
        return CoxLikelihood(self, X, offset, times, event, weights)


class _RiskSets:
    """Sorted layout shared by every evaluation at the same data"""

    def __init__(self, times: np.ndarray, event: np.ndarray, weights: np.ndarray):
        self.order = np.argsort(-times, kind="stable")
        t = times[self.order]
        self.times = t
        self.event = event[self.order]
        self.weights = weights[self.order]
        dead = self.event > 0
        self.event_times = np.unique(t[dead])[::-1]
        # risk set of event time u is every sorted row with t >= u
        self.ends = np.searchsorted(-t, -self.event_times, side="right")
        wd = self.weights * self.event
        self.deaths = np.array([wd[t == u].sum() for u in self.event_times])

    def prefix(self, v: np.ndarray) -> np.ndarray:
        return np.cumsum(v, axis=0)[self.ends - 1]

    def suffix(self, a: np.ndarray) -> np.ndarray:
        """Per sorted row, the sum of a_j over events whose risk set contains the row"""
        acc = np.zeros(len(self.times))
        np.add.at(acc, self.ends - 1, a)
        return np.cumsum(acc[::-1])[::-1]


class CoxPoint(LikelihoodPoint):
    def __init__(self, lik: "CoxLikelihood", beta: np.ndarray):
        self.lik = lik
        self.beta = beta
        rs = lik.risk
        X = lik.Xs
        eta = X @ beta + lik.offset_sorted
        shift = float(np.max(eta))
        self.eta = eta
        self.e = rs.weights * np.exp(eta - shift)
        self.gamma = rs.prefix(self.e)
        self.B = rs.prefix(self.e[:, None] * X)
        d = rs.deaths
        self.value = float(np.sum(rs.weights * rs.event * eta) - np.sum(d * (np.log(self.gamma) + shift)))
        self._c1 = rs.suffix(d / self.gamma)

    def gradient(self) -> np.ndarray:
        rs = self.lik.risk
        return self.lik.Xs.T @ (rs.weights * rs.event) - self.B.T @ (rs.deaths / self.gamma)

    def _neg_hessian(self) -> np.ndarray:
        X = self.lik.Xs
        d = self.lik.risk.deaths
        H = X.T @ ((self.e * self._c1)[:, None] * X) - self.B.T @ ((d / self.gamma**2)[:, None] * self.B)
        return 0.5 * (H + H.T)

    def hessian(self) -> np.ndarray:
        return -self._neg_hessian()

    def _directional(self, v: np.ndarray):
        eta_dot = self.lik.Xs @ v
        rs = self.lik.risk
        g1 = rs.prefix(self.e * eta_dot)
        b1 = rs.prefix((self.e * eta_dot)[:, None] * self.lik.Xs)
        return eta_dot, g1, b1

    def hessian_derivative(self, v, u=None) -> np.ndarray:
        X = self.lik.Xs
        rs = self.lik.risk
        d = rs.deaths
        eta_dot, g1, b1 = self._directional(v)
        c2 = rs.suffix(d * g1 / self.gamma**2)
        w = self.e * (eta_dot * self._c1 - c2)
        dH = X.T @ (w[:, None] * X)
        cross = b1.T @ ((d / self.gamma**2)[:, None] * self.B)
        dH -= cross + cross.T
        dH += 2.0 * self.B.T @ ((d * g1 / self.gamma**3)[:, None] * self.B)
        return -0.5 * (dH + dH.T)

    def hessian_second_trace(self, A, d1, d2, v12) -> float:
        """
        Uses z_i = x_i' A x_i from the eigen decomposition A = V L V', so the
        values are row sums of (X V)^2 L.
        """
        (v1, _), (v2, _) = d1, d2
        rs = self.lik.risk
        X = self.lik.Xs
        d = rs.deaths
        gam = self.gamma
        ev, vec = np.linalg.eigh(0.5 * (A + A.T))
        z = np.sum((X @ vec) ** 2 * ev, axis=1)

        e1, g1, b1 = self._directional(v1)
        e2, g2, b2 = self._directional(v2)
        e12 = X @ v12
        mix = e1 * e2 + e12
        g11 = rs.prefix(self.e * mix)
        b11 = rs.prefix((self.e * mix)[:, None] * X)
        trA = rs.prefix(self.e * z)
        trA1 = rs.prefix(self.e * e1 * z)
        trA2 = rs.prefix(self.e * e2 * z)

        t1 = np.sum(self.e * mix * z * self._c1)
        t2 = -np.sum(d * (trA1 * g2 + trA2 * g1) / gam**2)
        t3 = -np.sum(d * trA * g11 / gam**2)
        t4 = 2.0 * np.sum(d * trA * g1 * g2 / gam**3)

        AB = self.B @ A
        bMb = np.sum(AB * self.B, axis=1)
        b11Mb = np.sum(AB * b11, axis=1)
        b1Mb = np.sum(AB * b1, axis=1)
        b2Mb = np.sum(AB * b2, axis=1)
        b1Mb2 = np.sum((b1 @ A) * b2, axis=1)
        u1 = np.sum(d * (2.0 * b11Mb + 2.0 * b1Mb2) / gam**2)
        u2 = -np.sum(d * (4.0 * b1Mb * g2 + 4.0 * b2Mb * g1) / gam**3)
        u3 = -np.sum(d * 2.0 * bMb * g11 / gam**3)
        u4 = np.sum(d * 6.0 * bMb * g1 * g2 / gam**4)
        return -float(t1 + t2 + t3 + t4 - (u1 + u2 + u3 + u4))


class CoxLikelihood:
    """Partial likelihood bound to one data set; rows are sorted once"""

    def __init__(self, family: CoxPH, X, offset, times, event, weights=None):
        self.family = family
        times = np.asarray(times, dtype=float)
        event = np.asarray(event, dtype=float)
        w = np.ones_like(times) if weights is None else np.asarray(weights, dtype=float)
        self.X = [np.asarray(X, dtype=float)]
        self.offsets = [np.zeros_like(times) if offset is None else np.asarray(offset, dtype=float)]
        self.y = times
        self.event = event
        self.weights = w
        self.risk = _RiskSets(times, event, w)
        self.Xs = self.X[0][self.risk.order]
        self.offset_sorted = self.offsets[0][self.risk.order]
        self.slices = [slice(0, self.X[0].shape[1])]
        self.free_index = np.zeros(0, dtype=int)
        self.psi_full = np.zeros(0)

    K = 1
    Q = 0
    uses_pirls = False

    @property
    def P(self) -> int:
        return self.X[0].shape[1]

    @property
    def n(self) -> int:
        return len(self.y)

    def full_psi(self, psi=None) -> np.ndarray:
        return np.zeros(0)

    def linear_predictors(self, beta) -> List[np.ndarray]:
        return [self.X[0] @ beta + self.offsets[0]]

    def at(self, beta, psi=None, order: int = 4, psi_order: int = 2) -> CoxPoint:
        return CoxPoint(self, np.asarray(beta, dtype=float))

    def loglik(self, beta, psi=None) -> float:
        return CoxPoint(self, np.asarray(beta, dtype=float)).value

    def initial_beta(self, psi=None) -> np.ndarray:
        beta = np.zeros(self.P)
        if not np.isfinite(self.loglik(beta)):
            raise InitializationError("partial likelihood is not finite at zero coefficients")
        return beta

    def transform(self, T) -> "CoxLikelihood":
        return CoxLikelihood(self.family, self.X[0] @ T, self.offsets[0], self.y, self.event, self.weights)

    def restrict(self, keep) -> "CoxLikelihood":
        return CoxLikelihood(self.family, self.X[0][:, np.asarray(keep, dtype=int)], self.offsets[0], self.y, self.event, self.weights)


@dataclass
class CoxBaseline:
    """Breslow baseline quantities at the ascending event times"""

    times: np.ndarray
    hazard: np.ndarray
    cumhaz: np.ndarray
    q: np.ndarray
    a: np.ndarray

    def to_dict(self) -> Dict[str, list]:
        return {k: np.asarray(getattr(self, k)).tolist() for k in ("times", "hazard", "cumhaz", "q", "a")}

    @classmethod
    def from_dict(cls, raw: Dict[str, list]) -> "CoxBaseline":
        a = np.asarray(raw["a"], dtype=float)
        return cls(
            np.asarray(raw["times"], dtype=float),
            np.asarray(raw["hazard"], dtype=float),
            np.asarray(raw["cumhaz"], dtype=float),
            np.asarray(raw["q"], dtype=float),
            a.reshape(len(raw["times"]), -1) if a.size else np.zeros((len(raw["times"]), 0)),
        )

    def _index(self, t: np.ndarray) -> np.ndarray:
        # position of the last event time <= t, -1 before the first event
        return np.searchsorted(self.times, t, side="right") - 1


def cox_baseline(lik: CoxLikelihood, beta: np.ndarray) -> CoxBaseline:
    rs = lik.risk
    eta = lik.Xs @ beta + lik.offset_sorted
    e = rs.weights * np.exp(eta)
    gamma = rs.prefix(e)
    B = rs.prefix(e[:, None] * lik.Xs)
    h = rs.deaths / gamma
    qinc = rs.deaths / gamma**2
    ainc = qinc[:, None] * B
    # accumulate forwards in time
    h, qinc, ainc = h[::-1], qinc[::-1], ainc[::-1]
    return CoxBaseline(
        times=rs.event_times[::-1].copy(),
        hazard=h,
        cumhaz=np.cumsum(h),
        q=np.cumsum(qinc),
        a=np.cumsum(ainc, axis=0),
    )


def cox_predict(
    baseline: CoxBaseline,
    X: np.ndarray,
    beta: np.ndarray,
    Vb: np.ndarray,
    times: np.ndarray,
    offset: Optional[np.ndarray] = None,
) -> Dict[str, np.ndarray]:
    """
    Cumulative hazard, survival and its standard error at (t_i, x_i).

    se(S) = S exp(x b) sqrt(q + v' V v) with v = a - x H0, the delta method
    applied to log S = -H0 exp(x b).
    """
    X = np.asarray(X, dtype=float)
    times = np.asarray(times, dtype=float)
    eta = X @ beta + (0.0 if offset is None else offset)
    idx = baseline._index(times)
    before = idx < 0
    safe = np.maximum(idx, 0)
    H0 = np.where(before, 0.0, baseline.cumhaz[safe])
    q = np.where(before, 0.0, baseline.q[safe])
    a = np.where(before[:, None], 0.0, baseline.a[safe])
    risk = np.exp(eta)
    surv = np.exp(-H0 * risk)
    v = a - X * H0[:, None]
    var = q + np.sum((v @ Vb) * v, axis=1)
    se = surv * risk * np.sqrt(np.maximum(var, 0.0))
    return {"cumhaz": H0 * risk, "survival": surv, "se": se, "baseline_cumhaz": H0}


def cox_residuals(baseline: CoxBaseline, lik: CoxLikelihood, beta: np.ndarray) -> Dict[str, np.ndarray]:
    """Martingale and deviance residuals in the original row order"""
    eta = lik.linear_predictors(beta)[0]
    idx = baseline._index(lik.y)
    H0 = np.where(idx < 0, 0.0, baseline.cumhaz[np.maximum(idx, 0)])
    delta = lik.event
    mart = delta - H0 * np.exp(eta)
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = mart + np.where(delta > 0, delta * np.log(np.where(delta > 0, delta - mart, 1.0)), 0.0)
    dev = np.sign(mart) * np.sqrt(np.maximum(-2.0 * inner, 0.0))
    return {"martingale": mart, "deviance": dev}


def naive_partial_loglik(X: np.ndarray, beta: np.ndarray, times: np.ndarray, event: np.ndarray) -> float:
    """O(n^2) Breslow partial likelihood; reference for the recursions"""
    eta = X @ beta
    total = 0.0
    for i in np.flatnonzero(event > 0):
        at_risk = times >= times[i]
        total += eta[i] - np.log(np.sum(np.exp(eta[at_risk])))
    return float(total)
