"""
app/core/likelihood.py - Coefficient-space derivatives of a model log likelihood

A likelihood object binds a family to its model matrices. Evaluating it at
(beta, psi) gives a point exposing l, l_beta, l_beta_beta and the contractions
of the higher derivatives needed by the smoothing parameter machinery. psi
holds only the free extra parameters; fixed ones are kept internally.
"""

import logging
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import DataError, InitializationError

if TYPE_CHECKING:
    from app.core.families.base import ObservationFamily

logger = logging.getLogger(__name__)

DerivDict = Dict[Tuple[int, ...], np.ndarray]
Direction = Tuple[np.ndarray, Optional[np.ndarray]]


class LikelihoodPoint:
    """Derivatives of l at one (beta, psi); subclasses fill in the algebra"""

    value: float = 0.0

    def gradient(self) -> np.ndarray:
        raise NotImplementedError

    def hessian(self) -> np.ndarray:
        raise NotImplementedError

    def psi_gradient(self) -> np.ndarray:
        return np.zeros(0)

    def psi_hessian(self) -> np.ndarray:
        return np.zeros((0, 0))

    def beta_psi(self) -> np.ndarray:
        return np.zeros((len(self.gradient()), 0))

    def beta_psi_psi(self) -> np.ndarray:
        p = len(self.gradient())
        return np.zeros((p, 0, 0))

    def hessian_derivative(self, v: np.ndarray, u: Optional[np.ndarray] = None) -> np.ndarray:
        """d/de of l_beta_beta along beta + e v, psi + e u"""
        raise NotImplementedError

    def hessian_second_trace(self, A: np.ndarray, d1: Direction, d2: Direction, v12: np.ndarray) -> float:
        """
        tr(A d2/de1 de2 l_beta_beta) along beta(e1, e2), psi(e1, e2).

        d1 and d2 are the first order (beta, psi) directions and v12 is the
        second order beta direction; psi is linear in (e1, e2).
        """
        raise NotImplementedError


class ObservationPoint(LikelihoodPoint):
    def __init__(self, lik: "ObservationLikelihood", beta: np.ndarray, derivs: DerivDict, eta: List[np.ndarray]):
        self.lik = lik
        self.beta = beta
        self.d = derivs
        self.eta = eta
        self.value = float(np.sum(derivs[()]))
        self._trace_cache: Optional[Tuple[np.ndarray, Dict[Tuple[int, int], np.ndarray]]] = None

    @property
    def K(self) -> int:
        return self.lik.K

    def _get(self, *idx: int) -> Optional[np.ndarray]:
        return self.d.get(tuple(sorted(idx)))

    def _psi_index(self, a: int) -> int:
        return self.K + int(self.lik.free_index[a])

    def _split(self, v: np.ndarray) -> List[np.ndarray]:
        return [X @ v[sl] for X, sl in zip(self.lik.X, self.lik.slices)]

    def gradient(self) -> np.ndarray:
        g = np.zeros(self.lik.P)
        for k, (X, sl) in enumerate(zip(self.lik.X, self.lik.slices)):
            d = self._get(k)
            if d is not None:
                g[sl] = X.T @ d
        return g

    def _assemble(self, weights: Dict[Tuple[int, int], np.ndarray]) -> np.ndarray:
        H = np.zeros((self.lik.P, self.lik.P))
        for (j, k), w in weights.items():
            Xj, Xk = self.lik.X[j], self.lik.X[k]
            block = Xj.T @ (w[:, None] * Xk)
            H[self.lik.slices[j], self.lik.slices[k]] = block
            if j != k:
                H[self.lik.slices[k], self.lik.slices[j]] = block.T
        return H

    def _pairs(self):
        return [(j, k) for j in range(self.K) for k in range(j, self.K)]

    def hessian(self) -> np.ndarray:
        weights = {}
        for j, k in self._pairs():
            d = self._get(j, k)
            if d is not None:
                weights[(j, k)] = d
        return self._assemble(weights)

    def psi_gradient(self) -> np.ndarray:
        Q = self.lik.Q
        g = np.zeros(Q)
        for a in range(Q):
            d = self._get(self._psi_index(a))
            if d is not None:
                g[a] = np.sum(d)
        return g

    def psi_hessian(self) -> np.ndarray:
        Q = self.lik.Q
        h = np.zeros((Q, Q))
        for a in range(Q):
            for b in range(a, Q):
                d = self._get(self._psi_index(a), self._psi_index(b))
                if d is not None:
                    h[a, b] = h[b, a] = np.sum(d)
        return h

    def beta_psi(self) -> np.ndarray:
        Q = self.lik.Q
        out = np.zeros((self.lik.P, Q))
        for a in range(Q):
            for k, (X, sl) in enumerate(zip(self.lik.X, self.lik.slices)):
                d = self._get(k, self._psi_index(a))
                if d is not None:
                    out[sl, a] = X.T @ d
        return out

    def beta_psi_psi(self) -> np.ndarray:
        Q = self.lik.Q
        out = np.zeros((self.lik.P, Q, Q))
        for a in range(Q):
            for b in range(a, Q):
                for k, (X, sl) in enumerate(zip(self.lik.X, self.lik.slices)):
                    d = self._get(k, self._psi_index(a), self._psi_index(b))
                    if d is not None:
                        out[sl, a, b] = X.T @ d
                        out[sl, b, a] = out[sl, a, b]
        return out

    def _first_weights(self, j: int, k: int, eta_dot: List[np.ndarray], u: Optional[np.ndarray]) -> Optional[np.ndarray]:
        w = None
        for m in range(self.K):
            d = self._get(j, k, m)
            if d is not None:
                term = d * eta_dot[m]
                w = term if w is None else w + term
        if u is not None:
            for a in range(self.lik.Q):
                if u[a] == 0.0:
                    continue
                d = self._get(j, k, self._psi_index(a))
                if d is not None:
                    term = d * u[a]
                    w = term if w is None else w + term
        return w

    def hessian_derivative(self, v, u=None) -> np.ndarray:
        eta_dot = self._split(v)
        weights = {}
        for j, k in self._pairs():
            w = self._first_weights(j, k, eta_dot, u)
            if w is not None:
                weights[(j, k)] = w
        return self._assemble(weights)

    def _trace_weights(self, A: np.ndarray) -> Dict[Tuple[int, int], np.ndarray]:
        """rowsum((X_j A_jk) * X_k) for every predictor pair, cached per A"""
        if self._trace_cache is None or self._trace_cache[0] is not A:
            table = {}
            for j, k in self._pairs():
                Xj, Xk = self.lik.X[j], self.lik.X[k]
                block = A[self.lik.slices[j], self.lik.slices[k]]
                q = np.sum((Xj @ block) * Xk, axis=1)
                table[(j, k)] = q if j == k else 2.0 * q
            self._trace_cache = (A, table)
        return self._trace_cache[1]

    def hessian_second_trace(self, A, d1, d2, v12) -> float:
        (v1, u1), (v2, u2) = d1, d2
        e1, e2, e12 = self._split(v1), self._split(v2), self._split(v12)
        Q = self.lik.Q
        table = self._trace_weights(A)
        total = 0.0
        for (j, k), q in table.items():
            w = np.zeros(self.lik.n)
            for m in range(self.K):
                d3 = self._get(j, k, m)
                if d3 is not None:
                    w += d3 * e12[m]
                for l in range(self.K):
                    d4 = self._get(j, k, m, l)
                    if d4 is not None:
                        w += d4 * e1[m] * e2[l]
                for a in range(Q):
                    d = self._get(j, k, m, self._psi_index(a))
                    if d is None:
                        continue
                    if u2 is not None and u2[a] != 0.0:
                        w += d * e1[m] * u2[a]
                    if u1 is not None and u1[a] != 0.0:
                        w += d * e2[m] * u1[a]
            if u1 is not None and u2 is not None:
                for a in range(Q):
                    for b in range(Q):
                        if u1[a] == 0.0 or u2[b] == 0.0:
                            continue
                        d = self._get(j, k, self._psi_index(a), self._psi_index(b))
                        if d is not None:
                            w += d * u1[a] * u2[b]
            total += float(np.sum(w * q))
        return total


class ObservationLikelihood:
    """
    Sum of per-observation terms through K linear predictors.

    Args:
        family: observation family
        X: model matrix of each linear predictor (may have zero columns)
        offsets: offset of each linear predictor
        y: response
        weights: prior weights multiplying every per-observation term
        psi: full extra parameter vector; entries outside the free set stay fixed
        free: boolean mask of the extra parameters that are estimated
    """

    def __init__(
        self,
        family: "ObservationFamily",
        X: Sequence[np.ndarray],
        offsets: Sequence[np.ndarray],
        y: np.ndarray,
        weights: Optional[np.ndarray] = None,
        psi: Optional[np.ndarray] = None,
        free: Optional[np.ndarray] = None,
    ):
        self.family = family
        self.X = [np.asarray(x, dtype=float) for x in X]
        self.offsets = [np.asarray(o, dtype=float) for o in offsets]
        self.y = np.asarray(y, dtype=float)
        self.weights = np.ones_like(self.y) if weights is None else np.asarray(weights, dtype=float)
        self.psi_full = np.zeros(family.n_psi) if psi is None else np.asarray(psi, dtype=float).copy()
        mask = np.ones(family.n_psi, dtype=bool) if free is None else np.asarray(free, dtype=bool)
        self.free_index = np.flatnonzero(mask)
        if len(self.X) != family.n_predictors:
            raise DataError(f"{family.name} needs {family.n_predictors} model matrices, got {len(self.X)}")
        starts = np.cumsum([0] + [x.shape[1] for x in self.X])
        self.slices = [slice(int(a), int(b)) for a, b in zip(starts[:-1], starts[1:])]

    @property
    def P(self) -> int:
        return self.slices[-1].stop if self.slices else 0

    @property
    def K(self) -> int:
        return len(self.X)

    @property
    def Q(self) -> int:
        return len(self.free_index)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def uses_pirls(self) -> bool:
        return self.family.uses_pirls

    def full_psi(self, psi: Optional[np.ndarray]) -> np.ndarray:
        full = self.psi_full.copy()
        if psi is not None and len(self.free_index):
            full[self.free_index] = psi
        return full

    def linear_predictors(self, beta: np.ndarray) -> List[np.ndarray]:
        return [X @ beta[sl] + o for X, sl, o in zip(self.X, self.slices, self.offsets)]

    def at(self, beta: np.ndarray, psi: Optional[np.ndarray] = None, order: int = 4, psi_order: int = 2) -> ObservationPoint:
        beta = np.asarray(beta, dtype=float)
        eta = self.linear_predictors(beta)
        psi_order = psi_order if self.Q else 0
        derivs = self.family.eta_derivatives(self.y, eta, self.full_psi(psi), order, psi_order)
        derivs = {k: self.weights * v for k, v in derivs.items()}
        return ObservationPoint(self, beta, derivs, eta)

    def loglik(self, beta: np.ndarray, psi: Optional[np.ndarray] = None) -> float:
        eta = self.linear_predictors(beta)
        return float(np.sum(self.weights * self.family.loglik(self.y, eta, self.full_psi(psi))))

    def initial_beta(self, psi: Optional[np.ndarray] = None) -> np.ndarray:
        """Least squares match of every predictor to the family's constant start"""
        start = self.family.initial_eta(self.y, self.weights)
        beta = np.zeros(self.P)
        for X, sl, o, c in zip(self.X, self.slices, self.offsets, start):
            if X.shape[1]:
                beta[sl] = np.linalg.lstsq(X, c - o, rcond=None)[0]
        value = self.loglik(beta, psi)
        if not np.isfinite(value):
            raise InitializationError("log likelihood is not finite at the initial coefficients")
        return beta

    def transform(self, T: np.ndarray) -> "ObservationLikelihood":
        """Same likelihood in coefficients gamma with beta = T gamma; T must not mix predictors"""
        full = np.hstack(self.X) if self.P else np.zeros((self.n, 0))
        XT = full @ T
        mats = [XT[:, sl] for sl in self.slices]
        return self._with_matrices(mats)

    def restrict(self, keep: np.ndarray) -> "ObservationLikelihood":
        keep = np.asarray(keep, dtype=int)
        mats = []
        for X, sl in zip(self.X, self.slices):
            local = keep[(keep >= sl.start) & (keep < sl.stop)] - sl.start
            mats.append(X[:, local])
        return self._with_matrices(mats)

    def _with_matrices(self, mats: List[np.ndarray]) -> "ObservationLikelihood":
        free = np.zeros(self.family.n_psi, dtype=bool)
        free[self.free_index] = True
        return ObservationLikelihood(self.family, mats, self.offsets, self.y, self.weights, self.psi_full, free)
