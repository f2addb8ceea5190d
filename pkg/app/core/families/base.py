"""
app/core/families/base.py - Family contracts shared by every likelihood
"""

import itertools
import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import DataError
from app.core.families.links import DerivDict, Link, eta_mu_transform
from app.core.numerics import set_partitions

logger = logging.getLogger(__name__)


class Family:
    """Common attributes of all families"""

    name = "family"
    n_predictors = 1
    absorbs_intercept = False
    is_general = False

    def check_response(self, y: np.ndarray, event: Optional[np.ndarray] = None) -> None:
        if not np.all(np.isfinite(y)):
            raise DataError(f"{self.name}: response contains non-finite values")


class ObservationFamily(Family):
    """
    Likelihood that is a sum of per-observation terms l_i(mu_i^1..mu_i^K, psi).

    Subclasses supply mu_derivatives(), whose keys are sorted tuples of
    variable indices: 0..K-1 for the distribution parameters and K + a for
    the a-th extra parameter psi_a. A missing key means an identically zero
    derivative. Extra parameters are log scale and shape parameters, some of
    which may be held fixed.
    """

    psi_names: List[str] = []

    def __init__(self, links: Sequence[Link], psi: Optional[Sequence[float]] = None, fixed: Optional[Sequence[bool]] = None):
        self.links = list(links)
        self.n_predictors = len(self.links)
        n_psi = len(self.psi_names)
        self.psi_start = None if psi is None else np.asarray(psi, dtype=float).reshape(n_psi)
        self.psi_fixed = np.zeros(n_psi, dtype=bool) if fixed is None else np.asarray(fixed, dtype=bool)
        if self.psi_fixed.any() and self.psi_start is None:
            raise DataError(f"{self.name}: fixed extra parameters need starting values")

    @property
    def n_psi(self) -> int:
        return len(self.psi_names)

    @property
    def uses_pirls(self) -> bool:
        return self.n_predictors == 1

    def mu_derivatives(self, y: np.ndarray, mu: List[np.ndarray], psi: np.ndarray, order: int = 4, psi_order: int = 2) -> DerivDict:
        raise NotImplementedError

    def eta_derivatives(self, y: np.ndarray, eta: List[np.ndarray], psi: np.ndarray, order: int = 4, psi_order: int = 2) -> DerivDict:
        mu = [link.inverse(e) for link, e in zip(self.links, eta)]
        derivs = self.mu_derivatives(y, mu, psi, order, psi_order)
        link_derivs = [None if link.is_identity else link.derivatives(m) for link, m in zip(self.links, mu)]
        return eta_mu_transform(derivs, link_derivs)

    def loglik(self, y: np.ndarray, eta: List[np.ndarray], psi: np.ndarray) -> np.ndarray:
        return self.eta_derivatives(y, eta, psi, order=0, psi_order=0)[()]

    def saturated_loglik(self, y: np.ndarray, psi: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def scale(self, psi: np.ndarray) -> float:
        return 1.0

    def deviance(self, y: np.ndarray, eta: List[np.ndarray], psi: np.ndarray, weights: Optional[np.ndarray] = None) -> float:
        w = np.ones_like(y) if weights is None else weights
        diff = self.saturated_loglik(y, psi) - self.loglik(y, eta, psi)
        return float(2.0 * self.scale(psi) * np.sum(w * diff))

    def initial_eta(self, y: np.ndarray, weights: np.ndarray) -> List[float]:
        raise NotImplementedError

    def initial_psi(self, y: np.ndarray, weights: np.ndarray) -> np.ndarray:
        return np.zeros(self.n_psi) if self.psi_start is None else self.psi_start.copy()

    def response_mean(self, eta: List[np.ndarray], psi: np.ndarray) -> np.ndarray:
        return self.links[0].inverse(eta[0])

    def sample(self, eta: List[np.ndarray], psi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError(f"{self.name} has no sampler")


def derivative_keys(n_eta: int, n_psi: int, order: int, psi_order: int) -> List[Tuple[int, ...]]:
    """Sorted index tuples requested for the given orders, the empty key first."""
    keys: List[Tuple[int, ...]] = []
    top = max(order, psi_order)
    for total in range(top + 1):
        for key in itertools.combinations_with_replacement(range(n_eta + n_psi), total):
            n_p = sum(1 for i in key if i >= n_eta)
            if n_p <= psi_order and total - n_p <= order:
                keys.append(key)
    return keys


def filter_keys(derivs: DerivDict, n_eta: int, order: int, psi_order: int) -> DerivDict:
    top = max(order, psi_order)
    out = {}
    for key, val in derivs.items():
        n_p = sum(1 for i in key if i >= n_eta)
        if len(key) <= top and n_p <= psi_order and len(key) - n_p <= order:
            out[key] = val
    return out


def chain_parameter(derivs: DerivDict, index: int, d1: np.ndarray, d2: np.ndarray) -> DerivDict:
    """
    Re-express derivatives taken in a parameter p as derivatives in t, where p = p(t).

    d1 and d2 are dp/dt and d2p/dt2. Only keys holding the index at most
    twice are supported, which is all that fitting requests.
    """
    out: DerivDict = {}
    for key, val in derivs.items():
        c = key.count(index)
        if c == 0:
            out[key] = val
        elif c == 1:
            out[key] = d1 * val
        elif c == 2:
            single = tuple(sorted(tuple(i for i in key if i != index) + (index,)))
            lower = derivs.get(single)
            term = d1**2 * val
            if lower is not None:
                term = term + d2 * lower
            out[key] = term
        else:
            raise ValueError("third order in a transformed parameter is not supported")
    return out


def chain_log_parameter(derivs: DerivDict, index: int, value: np.ndarray) -> DerivDict:
    """Derivatives in a positive parameter k re-expressed in log k."""
    return chain_parameter(derivs, index, value, value)


def compose(
    outer: Sequence[np.ndarray],
    inner: Callable[[Tuple[int, ...]], Optional[np.ndarray]],
    key: Tuple[int, ...],
) -> Optional[np.ndarray]:
    """
    Derivative of f(u(x)) over the variables in key, by set partitions.

    outer[r] is the r-th derivative of f at u; inner(block) returns the
    derivative of u over the block of variables, or None when it is zero.
    """
    if not key:
        return outer[0]
    total = None
    for partition in set_partitions(list(range(len(key)))):
        term = outer[len(partition)]
        for block in partition:
            d = inner(tuple(sorted(key[i] for i in block)))
            if d is None:
                term = None
                break
            term = term * d
        if term is not None:
            total = term if total is None else total + term
    return total
