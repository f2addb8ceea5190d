"""
tests/test_inference.py
Test cases for covariance corrections, effective degrees of freedom and AIC
"""

import numpy as np
import pytest
from scipy.linalg import cholesky

from app.core.design import ModelConfig
from app.core.inference import (
    FitResult,
    cholesky_derivatives,
    compute_Vrho,
    correct_covariance,
    corrected_aic,
    credible_band,
    edf,
)
from app.core.model import SmoothModel
from tests import BaseTestCase, SampleDataGenerator, fd_jacobian, working_problem

PHI = 0.09


def _fit(family="gaussian", n=200, **params):
    if family == "gaussian":
        data = SampleDataGenerator.smooth_gaussian(n=n)
        raw = SampleDataGenerator.model_config("gaussian", [{"var": "x", "k": 8}, {"var": "z", "k": 6}], family_params=params)
    else:
        data = SampleDataGenerator.additive(family, n=n)
        raw = SampleDataGenerator.model_config(family, [{"var": "x0", "k": 8}, {"var": "x1", "k": 8}], family_params=params)
    return SmoothModel(ModelConfig.from_dict(raw)).fit(data)


class TestSmoothingParameterCovariance(BaseTestCase):
    """Test V_rho and the Cholesky factor derivatives"""

    def test_floor_and_dropped_entries(self):
        """Test tiny curvature is floored and dropped parameters are zeroed"""
        hess = -np.diag([4.0, 1e-20, 2.0])
        V = compute_Vrho(hess)
        self.assertAlmostEqual(V[0, 0], 0.25)
        self.assertAlmostEqual(V[1, 1], 1.0 / (4.0 * 1e-8), delta=1.0)
        V = compute_Vrho(hess, dropped=[1])
        np.testing.assert_array_equal(V[1], np.zeros(3))
        np.testing.assert_array_equal(V[:, 1], np.zeros(3))
        self.assertAlmostEqual(V[2, 2], 0.5)
        np.testing.assert_array_equal(compute_Vrho(hess, dropped=[0, 1, 2]), np.zeros((3, 3)))

    def test_cholesky_derivatives_match_finite_differences(self):
        """Test dR/d rho for the Gaussian posterior covariance"""
        config = SampleDataGenerator.model_config(
            "gaussian", [{"var": "x", "k": 6}, {"var": "z", "k": 5}], family_params={"scale": PHI}
        )
        lik, working, _ = working_problem(config, SampleDataGenerator.smooth_gaussian(n=150))
        X = lik.X[0]
        rho = np.array([0.5, 1.5])

        def factor(r):
            H = X.T @ X / PHI + working.assemble(r)
            return cholesky(np.linalg.inv(H), lower=False)

        Vb = np.linalg.inv(X.T @ X / PHI + working.assemble(rho))
        lam = np.exp(rho)
        R, dR = cholesky_derivatives(Vb, [lam[k] * working.penalty(k) for k in range(2)])
        np.testing.assert_allclose(R.T @ R, Vb, rtol=1e-10, atol=1e-14)
        fd = fd_jacobian(factor, rho, 1e-5)
        for k in range(2):
            scale = float(np.max(np.abs(fd[..., k])))
            self.assertLess(float(np.max(np.abs(dR[k] - fd[..., k]))), 1e-6 * max(scale, 1e-12) + 1e-12)

    def test_zero_rho_covariance_adds_nothing(self):
        """Test corrections vanish when V_rho is zero"""
        Vb = np.diag([1.0, 2.0])
        first, second = correct_covariance(Vb, np.ones((2, 1)), np.zeros((1, 1)), [np.eye(2)])
        np.testing.assert_array_equal(first, np.zeros((2, 2)))
        np.testing.assert_array_equal(second, np.zeros((2, 2)))


class TestEdfAndAic(BaseTestCase):
    """Test complexity measures and information criteria"""

    def test_unpenalized_edf_is_parameter_count(self):
        """Test tau0 = tau1 = P without penalty"""
        A = np.random.randn(20, 4)
        info = A.T @ A
        tau0, tau1, tau, per_coef = edf(np.linalg.inv(info), info)
        self.assertAlmostEqual(tau0, 4.0)
        self.assertAlmostEqual(tau1, 4.0)
        self.assertAlmostEqual(tau, 4.0)
        np.testing.assert_allclose(per_coef, np.ones(4))

    def test_corrected_aic(self):
        """Test the AIC arithmetic including extra parameters"""
        aic, corrected = corrected_aic(-100.0, 5.0, 6.5, n_psi=1)
        self.assertAlmostEqual(aic, 212.0)
        self.assertAlmostEqual(corrected, 215.0)

    def test_credible_band(self):
        """Test pointwise standard errors and the 95% band"""
        X = np.array([[1.0, 0.0], [1.0, 1.0]])
        band = credible_band(X, np.array([1.0, 2.0]), np.diag([0.04, 0.01]))
        np.testing.assert_allclose(band["fit"], [1.0, 3.0])
        np.testing.assert_allclose(band["se"], [0.2, np.sqrt(0.05)])
        np.testing.assert_allclose(band["upper"] - band["fit"], 1.959963984540054 * band["se"], rtol=1e-12)


class TestFitResult(BaseTestCase):
    """Test the summaries of fitted models"""

    def test_covariance_ordering(self):
        """Test Vb <= V_ks <= Vc and the edf and AIC orderings"""
        model = _fit("poisson")
        r = model.result
        self.assertPSD(r.Vb)
        self.assertPSD(r.V_ks - r.Vb)
        self.assertPSD(r.Vc - r.V_ks)
        self.assertGreaterEqual(r.tau1, r.tau0 - 1e-10)
        self.assertGreaterEqual(r.tau, r.tau0 - 1e-10)
        self.assertGreaterEqual(r.aic_corrected, r.aic - 1e-8)
        self.assertLess(r.tau0, model.design.P)

    def test_covariance_is_in_original_coordinates(self):
        """Test Vb is the inverse penalized Hessian of the original coefficients"""
        model = _fit("gaussian", scale=PHI)
        X = model.design.X[0]
        H = X.T @ X / PHI + model.structure.assemble(model.result.rho)
        np.testing.assert_allclose(model.result.Vb, np.linalg.inv(H), rtol=1e-6, atol=1e-10)
        beta = np.linalg.solve(H, X.T @ model.design.y / PHI)
        np.testing.assert_allclose(model.result.beta, beta, rtol=1e-6, atol=1e-8)

    def test_dict_round_trip(self):
        """Test FitResult serialization keeps every field"""
        r = _fit("gaussian", scale=PHI).result
        again = FitResult.from_dict(r.to_dict())
        np.testing.assert_array_equal(again.Vc, r.Vc)
        np.testing.assert_array_equal(again.rho, r.rho)
        self.assertEqual(again.aic, r.aic)
        self.assertEqual(again.dropped, r.dropped)


@pytest.mark.unit
def test_tau1_between_tau0_and_parameter_count():
    """Test tau0 <= tau1 <= P for a ridge problem"""
    A = np.random.default_rng(2).normal(size=(30, 5))
    info = A.T @ A
    Vb = np.linalg.inv(info + 3.0 * np.eye(5))
    tau0, tau1, _, _ = edf(Vb, info)
    assert tau0 <= tau1 <= 5.0
