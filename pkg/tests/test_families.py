"""
tests/test_families.py
Test cases for likelihood families: derivative dictionaries, links and the registry
"""

from typing import Dict, List, Tuple

import numpy as np
import pytest

from app.core.exceptions import ConfigError, DataError
from app.core.families import FAMILIES, get_family
from app.core.families.base import chain_log_parameter, derivative_keys, filter_keys
from app.core.families.links import get_link
from app.core.families.ocat import cut_points, ocat_probabilities
from tests import BaseTestCase

H = 1e-5
RTOL = 1e-4


def _setup(name: str, rng: np.random.Generator, n: int = 12):
    """Family, response, linear predictors and full extra parameters at a generic point"""
    if name == "gaussian":
        fam = get_family("gaussian")
        return fam, rng.normal(size=n), [rng.normal(size=n)], np.array([0.3])
    if name == "gaussian-log":
        fam = get_family("gaussian", {"link": "log"})
        return fam, rng.uniform(0.5, 3.0, size=n), [rng.normal(0.3, 0.3, size=n)], np.array([-0.4])
    if name == "poisson":
        return get_family("poisson"), rng.poisson(2.0, size=n).astype(float), [rng.normal(0.5, 0.3, size=n)], np.zeros(0)
    if name == "binomial":
        return get_family("binomial"), rng.integers(0, 2, size=n).astype(float), [rng.normal(size=n)], np.zeros(0)
    if name == "binomial-cloglog":
        fam = get_family("binomial", {"link": "cloglog"})
        return fam, rng.integers(0, 2, size=n).astype(float), [rng.normal(-0.3, 0.5, size=n)], np.zeros(0)
    if name == "nb":
        return get_family("nb"), rng.poisson(3.0, size=n).astype(float), [rng.normal(0.8, 0.3, size=n)], np.array([0.5])
    if name == "beta":
        return get_family("beta"), rng.uniform(0.1, 0.9, size=n), [rng.normal(0.0, 0.5, size=n)], np.array([1.2])
    if name == "tw":
        fam = get_family("tw")
        y = fam.sample([np.full(n, 0.5)], np.array([0.2, 0.1]), rng)
        return fam, y, [rng.normal(0.4, 0.3, size=n)], np.array([0.2, 0.1])
    if name == "ocat":
        fam = get_family("ocat", {"R": 4})
        return fam, rng.integers(1, 5, size=n).astype(float), [rng.normal(0.5, 1.0, size=n)], np.array([0.1, 0.4])
    if name == "ziP":
        fam = get_family("ziP")
        y = np.where(rng.random(n) < 0.4, 0.0, rng.poisson(2.5, size=n) + 1.0)
        return fam, y, [rng.normal(0.6, 0.3, size=n)], np.array([-0.3, 0.2])
    if name == "ziplss":
        fam = get_family("ziplss")
        y = np.where(rng.random(n) < 0.4, 0.0, rng.poisson(2.5, size=n) + 1.0)
        return fam, y, [rng.normal(0.6, 0.3, size=n), rng.normal(0.2, 0.4, size=n)], np.zeros(0)
    if name == "gaulss":
        fam = get_family("gaulss")
        return fam, rng.normal(size=n), [rng.normal(size=n), rng.normal(-0.2, 0.3, size=n)], np.zeros(0)
    raise KeyError(name)


FD_CASES = ["gaussian", "gaussian-log", "poisson", "binomial", "binomial-cloglog", "nb", "beta", "tw", "ocat", "ziP", "ziplss", "gaulss"]


def _perturbed(fam, y, eta: List[np.ndarray], psi: np.ndarray, var: int, h: float) -> Dict[Tuple[int, ...], np.ndarray]:
    K = len(eta)
    eta2 = [e.copy() for e in eta]
    psi2 = psi.copy()
    if var < K:
        eta2[var] = eta2[var] + h
    else:
        psi2[var - K] += h
    return fam.eta_derivatives(y, eta2, psi2, order=4, psi_order=2)


def check_derivatives(case: str, seed: int = 0) -> List[str]:
    """
    Compare every requested derivative with central differences of the key
    one order below it. Missing keys must be identically zero.
    """
    rng = np.random.default_rng(seed)
    fam, y, eta, psi = _setup(case, rng)
    K, Q = len(eta), len(psi)
    d = fam.eta_derivatives(y, eta, psi, order=4, psi_order=2)
    requested = set(derivative_keys(K, Q, 4, 2))
    zero = np.zeros_like(y)
    failures = []
    for var in range(K + Q):
        up = _perturbed(fam, y, eta, psi, var, H)
        down = _perturbed(fam, y, eta, psi, var, -H)
        for key in requested:
            target = tuple(sorted(key + (var,)))
            if target not in requested:
                continue
            fd = (up.get(key, zero) - down.get(key, zero)) / (2.0 * H)
            exact = d.get(target, zero)
            scale = max(float(np.max(np.abs(exact))), float(np.max(np.abs(fd))), 1.0)
            err = float(np.max(np.abs(fd - exact))) / scale
            if err > RTOL:
                failures.append(f"{case}: d{target} vs fd of d{key} in {var}: {err:.2e}")
    return failures


@pytest.mark.unit
@pytest.mark.parametrize("case", FD_CASES)
def test_derivatives_match_finite_differences(case):
    """Test every derivative key up to fourth order in eta and second in psi"""
    failures = check_derivatives(case)
    assert not failures, "\n".join(failures[:10])


class TestDerivativeDictionaries(BaseTestCase):
    """Test key bookkeeping and value consistency"""

    def test_requested_keys(self):
        """Test the keys requested for given orders"""
        keys = derivative_keys(1, 1, 2, 1)
        self.assertEqual(keys[0], ())
        self.assertIn((0, 0), keys)
        self.assertIn((0, 1), keys)
        self.assertNotIn((0, 0, 1), keys)
        self.assertNotIn((1, 1), keys)
        self.assertNotIn((0, 0, 0), keys)

    def test_filter_keys(self):
        """Test filtering a dictionary down to lower orders"""
        d = {(): 1, (0,): 2, (0, 0, 0): 3, (1,): 4, (0, 1, 1): 5}
        out = filter_keys(d, 1, 2, 1)
        self.assertEqual(set(out), {(), (0,), (1,)})

    def test_loglik_is_value_entry(self):
        """Test that loglik agrees with the empty key for every family"""
        rng = np.random.default_rng(3)
        for case in FD_CASES:
            fam, y, eta, psi = _setup(case, rng)
            d = fam.eta_derivatives(y, eta, psi, order=2, psi_order=0)
            np.testing.assert_allclose(fam.loglik(y, eta, psi), d[()], rtol=1e-10, atol=1e-12, err_msg=case)

    def test_gaussian_closed_form(self):
        """Test gaussian log density and derivatives in closed form"""
        fam = get_family("gaussian")
        y, eta, psi = np.array([1.0, -0.5]), [np.array([0.2, 0.1])], np.array([np.log(2.0)])
        d = fam.eta_derivatives(y, eta, psi)
        r = y - eta[0]
        np.testing.assert_allclose(d[()], -0.5 * r**2 / 2.0 - 0.5 * np.log(2.0 * np.pi * 2.0))
        np.testing.assert_allclose(d[(0,)], r / 2.0)
        np.testing.assert_allclose(d[(0, 0)], -0.5)

    def test_known_scale_gaussian_has_no_extra_parameters(self):
        """Test the known scale gaussian"""
        fam = get_family("gaussian", {"scale": 4.0})
        self.assertEqual(fam.n_psi, 0)
        d = fam.eta_derivatives(np.array([1.0]), [np.array([0.0])], np.zeros(0))
        self.assertAlmostEqual(float(d[(0, 0)][0]), -0.25)

    def test_chain_log_parameter(self):
        """Test re-expressing derivatives in a log parameter"""
        # f(k) = k^2 with k = e^t: df/dt = 2k^2, d2f/dt2 = 4k^2
        k = np.array([1.5])
        d = {(): k**2, (0,): 2.0 * k, (0, 0): np.array([2.0])}
        out = chain_log_parameter(d, 0, k)
        np.testing.assert_allclose(out[(0,)], 2.0 * k**2)
        np.testing.assert_allclose(out[(0, 0)], 4.0 * k**2)


class TestFamilyBehaviour(BaseTestCase):
    """Test response checks, deviance and helpers"""

    def test_saturated_deviance_is_zero_at_data(self):
        """Test deviance vanishes when the mean equals the response"""
        y = np.array([1.0, 2.0, 5.0])
        fam = get_family("poisson")
        self.assertAlmostEqual(fam.deviance(y, [np.log(y)], np.zeros(0)), 0.0, places=10)
        fam = get_family("gaussian")
        self.assertAlmostEqual(fam.deviance(y, [y], np.array([0.0])), 0.0, places=10)

    def test_response_checks(self):
        """Test that invalid responses are rejected"""
        with self.assertRaises(DataError):
            get_family("poisson").check_response(np.array([1.0, -1.0]))
        with self.assertRaises(DataError):
            get_family("beta").check_response(np.array([0.5, 1.0]))
        with self.assertRaises(DataError):
            get_family("ocat", {"R": 3}).check_response(np.array([1.0, 4.0]))
        with self.assertRaises(DataError):
            get_family("nb").check_response(np.array([1.5]))
        with self.assertRaises(DataError):
            get_family("tw").check_response(np.array([-0.1]))
        with self.assertRaises(DataError):
            get_family("gaussian").check_response(np.array([np.inf]))

    def test_ocat_probabilities(self):
        """Test ordered categorical cut points and probabilities"""
        theta = np.array([0.0, np.log(2.0)])
        np.testing.assert_allclose(cut_points(theta), [-1.0, 0.0, 2.0])
        probs = ocat_probabilities(np.array([-3.0, 0.0, 4.0, 40.0]), theta, 4)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        self.assertTrue(np.all(probs >= 0.0))
        self.assertGreater(probs[3, 3], 0.999)

    def test_samplers_produce_valid_responses(self):
        """Test samplers respect each family's support"""
        rng = np.random.default_rng(11)
        for case in FD_CASES:
            fam, y, eta, psi = _setup(case, rng, n=200)
            draw = fam.sample(eta, psi, rng)
            self.assertEqual(draw.shape, (200,), msg=case)
            fam.check_response(draw)

    def test_links(self):
        """Test link inverses and derivative orders"""
        mu = np.array([0.2, 0.5, 0.8])
        for name in ("identity", "log", "logit", "cloglog"):
            link = get_link(name)
            np.testing.assert_allclose(link.inverse(link.linkfun(mu)), mu, rtol=1e-12)
            self.assertEqual(len(link.derivatives(mu)), 4)
        with self.assertRaises(ConfigError):
            get_link("probit")


class TestRegistry(BaseTestCase):
    """Test the family registry"""

    def test_every_family_is_registered(self):
        """Test the registry names"""
        self.assertEqual(
            set(FAMILIES),
            {"gaussian", "poisson", "binomial", "nb", "beta", "tw", "ocat", "ziP", "ziplss", "gaulss", "coxph"},
        )

    def test_unknown_family(self):
        """Test an unknown family name"""
        with self.assertRaises(ConfigError):
            get_family("weibull")

    def test_predictor_counts(self):
        """Test the number of linear predictors per family"""
        self.assertEqual(get_family("gaulss").n_predictors, 2)
        self.assertEqual(get_family("ziplss").n_predictors, 2)
        self.assertEqual(get_family("tw").n_psi, 2)
        self.assertEqual(get_family("ocat", {"R": 5}).n_psi, 3)
        self.assertTrue(get_family("coxph").is_general)
        self.assertTrue(get_family("coxph").absorbs_intercept)


@pytest.mark.unit
def test_zero_inflated_derivatives_at_large_log_mean():
    """Test count derivatives approach -exp(gamma) and stay finite"""
    from app.core.families.zip import count_derivatives, presence_derivatives

    y = np.array([0.0, 1.0, 2.0, 7.0])
    gamma = np.full(4, 30.0)
    d = count_derivatives(y, gamma)
    lam = np.exp(30.0)
    for k in (3, 4):
        np.testing.assert_allclose(d[k][1:], -lam, rtol=1e-6)
        assert d[k][0] == 0.0
    assert all(np.all(np.isfinite(p)) for p in presence_derivatives(y, gamma))
    fam = get_family("ziP")
    out = fam.eta_derivatives(y, [gamma], np.array([-2.0, 0.0]), order=4, psi_order=2)
    assert all(np.all(np.isfinite(v)) for v in out.values())
