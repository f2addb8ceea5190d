"""
app/core/families/links.py - Link functions and the mu-to-eta derivative transform
"""

import itertools
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, logit

from app.core.exceptions import ConfigError, LinkDegeneracyError

PROB_EPS = 1e-14

DerivDict = Dict[Tuple[int, ...], np.ndarray]


class Link:
    """
    Link g with eta = g(mu).

    derivatives(mu) returns (g', g'', g''', g'''') with respect to mu.
    """

    name = "link"

    def linkfun(self, mu: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def inverse(self, eta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def derivatives(self, mu: np.ndarray) -> Tuple[np.ndarray, ...]:
        raise NotImplementedError

    @property
    def is_identity(self) -> bool:
        return False


class IdentityLink(Link):
    name = "identity"

    def linkfun(self, mu):
        return np.asarray(mu, dtype=float)

    def inverse(self, eta):
        return np.asarray(eta, dtype=float)

    def derivatives(self, mu):
        one = np.ones_like(np.asarray(mu, dtype=float))
        zero = np.zeros_like(one)
        return one, zero, zero, zero

    @property
    def is_identity(self) -> bool:
        return True


class LogLink(Link):
    name = "log"

    def linkfun(self, mu):
        return np.log(mu)

    def inverse(self, eta):
        return np.exp(np.minimum(eta, 700.0))

    def derivatives(self, mu):
        mu = np.asarray(mu, dtype=float)
        return 1.0 / mu, -1.0 / mu**2, 2.0 / mu**3, -6.0 / mu**4


class LogitLink(Link):
    name = "logit"

    def linkfun(self, mu):
        return logit(mu)

    def inverse(self, eta):
        return np.clip(expit(eta), PROB_EPS, 1.0 - PROB_EPS)

    def derivatives(self, mu):
        mu = np.asarray(mu, dtype=float)
        nu = 1.0 - mu
        return (
            1.0 / mu + 1.0 / nu,
            -1.0 / mu**2 + 1.0 / nu**2,
            2.0 / mu**3 + 2.0 / nu**3,
            -6.0 / mu**4 + 6.0 / nu**4,
        )


class CloglogLink(Link):
    name = "cloglog"

    def linkfun(self, mu):
        return np.log(-np.log1p(-mu))

    def inverse(self, eta):
        return np.clip(-np.expm1(-np.exp(np.minimum(eta, 700.0))), PROB_EPS, 1.0 - PROB_EPS)

    def derivatives(self, mu):
        # dmu/deta chain expressed through t = e^eta, then inverted
        eta = self.linkfun(mu)
        t = np.exp(eta)
        m1 = t * np.exp(-t)
        m2 = m1 * (1.0 - t)
        m3 = m1 * ((1.0 - t) ** 2 - t)
        m4 = m1 * ((1.0 - t) ** 3 - 3.0 * t * (1.0 - t) - t)
        return _invert_chain(m1, m2, m3, m4)


LINKS = {"identity": IdentityLink, "log": LogLink, "logit": LogitLink, "cloglog": CloglogLink}


def get_link(name: str) -> Link:
    try:
        return LINKS[name]()
    except KeyError:
        raise ConfigError(f"unknown link '{name}'")


def _invert_chain(d1, d2, d3, d4):
    # derivatives of an inverse function from those of the function
    return (
        1.0 / d1,
        -d2 / d1**3,
        (3.0 * d2**2 - d1 * d3) / d1**5,
        (-15.0 * d2**3 + 10.0 * d1 * d2 * d3 - d1**2 * d4) / d1**7,
    )


def mu_eta_coefficients(g1, g2, g3, g4) -> Tuple[np.ndarray, ...]:
    """dmu/deta through fourth order from the link derivatives"""
    if np.any(np.abs(g1) < 1e-300):
        raise LinkDegeneracyError("link derivative vanished")
    return _invert_chain(g1, g2, g3, g4)


def _bell_table(m1, m2, m3, m4) -> Dict[Tuple[int, int], np.ndarray]:
    return {
        (1, 1): m1,
        (2, 1): m2,
        (2, 2): m1**2,
        (3, 1): m3,
        (3, 2): 3.0 * m1 * m2,
        (3, 3): m1**3,
        (4, 1): m4,
        (4, 2): 4.0 * m1 * m3 + 3.0 * m2**2,
        (4, 3): 6.0 * m1**2 * m2,
        (4, 4): m1**4,
    }


def eta_mu_transform(
    mu_derivs: DerivDict,
    link_derivs: Sequence[Optional[Tuple[np.ndarray, ...]]],
) -> DerivDict:
    """
    Convert log-likelihood derivatives in the distribution parameters to the linear predictors.

    Keys are sorted tuples of variable indices; indices below len(link_derivs)
    are distribution parameters, larger ones are extra parameters passed
    through unchanged. link_derivs[k] is None for an identity link.
    """
    K = len(link_derivs)
    tables: List[Optional[Dict]] = []
    for ld in link_derivs:
        tables.append(None if ld is None else _bell_table(*mu_eta_coefficients(*ld)))
    if all(t is None for t in tables):
        return dict(mu_derivs)

    # a zero mu-derivative can still give a non-zero eta-derivative, so
    # candidates are every eta multiset up to the highest order supplied
    depth: Dict[Tuple[int, ...], int] = {}
    for key in mu_derivs:
        extra = tuple(i for i in key if i >= K)
        depth[extra] = max(depth.get(extra, 0), len(key) - len(extra))
    candidates = [
        tuple(sorted(etas + extra))
        for extra, n in depth.items()
        for r in range(n + 1)
        for etas in itertools.combinations_with_replacement(range(K), r)
    ]

    out: DerivDict = {}
    for key in candidates:
        counts = [key.count(k) for k in range(K)]
        extra = tuple(i for i in key if i >= K)
        choices: List[List[Tuple[int, Optional[np.ndarray]]]] = []
        for k, c in enumerate(counts):
            if c == 0:
                choices.append([(0, None)])
            elif tables[k] is None:
                choices.append([(c, None)])
            else:
                choices.append([(i, tables[k][(c, i)]) for i in range(1, c + 1)])
        total = None
        for combo in itertools.product(*choices):
            src = tuple(sorted(sum(([k] * i for k, (i, _) in enumerate(combo)), []) + list(extra)))
            base = mu_derivs.get(src)
            if base is None:
                continue
            term = base
            for _, coef in combo:
                if coef is not None:
                    term = term * coef
            total = term if total is None else total + term
        if total is not None:
            out[key] = total
    return out

