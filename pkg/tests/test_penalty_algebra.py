"""
tests/test_penalty_algebra.py
Test cases for penalty blocks, log pseudo-determinants and reparameterizations
"""

import math
from fractions import Fraction
from typing import List

import numpy as np
import pytest

from app.core.penalty_algebra import (
    RHO_BOUND,
    BlockType,
    PenaltyBlock,
    PenaltyStructure,
    assemble_S_lambda,
    clamp_rho,
    logdet_splus,
    preprocess_blocks,
    reparameterize_type3,
)
from tests import BaseTestCase, fd_gradient, fd_jacobian


def _exact_logdet(mats: List[np.ndarray], lam: np.ndarray) -> float:
    """log det of sum lam_j S_j by exact rational elimination"""
    n = mats[0].shape[0]
    A = [[sum(Fraction(float(l)) * Fraction(float(m[i, j])) for l, m in zip(lam, mats)) for j in range(n)] for i in range(n)]
    det = Fraction(1)
    for c in range(n):
        pivot = next(r for r in range(c, n) if A[r][c] != 0)
        if pivot != c:
            A[c], A[pivot] = A[pivot], A[c]
            det = -det
        det *= A[c][c]
        for r in range(c + 1, n):
            f = A[r][c] / A[c][c]
            for j in range(c, n):
                A[r][j] -= f * A[c][j]
    return math.log(det.numerator) - math.log(det.denominator)


class TestPenaltyBlocks(BaseTestCase):
    """Test block construction and structure queries"""

    def setUp(self):
        super().setUp()
        D = np.diff(np.eye(5), n=2, axis=0)
        self.dense = D.T @ D
        self.diag = np.diag([0.0, 1.0, 4.0])
        self.structure = PenaltyStructure(
            10,
            [
                PenaltyBlock.single(1, self.dense, 0),
                PenaltyBlock.single(6, self.diag, 1),
            ],
        )

    def test_block_types_and_ranks(self):
        """Test block classification and numerical ranks"""
        self.assertEqual(self.structure.blocks[0].block_type, BlockType.DENSE_SINGLE)
        self.assertEqual(self.structure.blocks[1].block_type, BlockType.DIAG_SINGLE)
        self.assertEqual([b.rank for b in self.structure.blocks], [3, 2])
        self.assertEqual(self.structure.M, 2)
        self.assertEqual(self.structure.M_p, 10 - 5)

    def test_assemble_and_apply(self):
        """Test S lambda assembly and per-penalty products"""
        rho = np.array([0.3, -1.2])
        S = assemble_S_lambda(self.structure, rho)
        expected = np.exp(0.3) * self.structure.penalty(0) + np.exp(-1.2) * self.structure.penalty(1)
        np.testing.assert_allclose(S, expected)
        v = np.random.randn(10)
        np.testing.assert_allclose(self.structure.apply(0, v), self.structure.penalty(0) @ v)
        np.testing.assert_array_equal(S[0], np.zeros(10))

    def test_clamp(self):
        """Test log smoothing parameters are clamped to the working infinity"""
        np.testing.assert_array_equal(clamp_rho([-100.0, 0.0, 100.0]), [-RHO_BOUND, 0.0, RHO_BOUND])

    def test_single_block_logdet_gradient(self):
        """Test single-penalty log determinants are linear in rho"""
        rho = np.array([1.5, -0.5])
        value, grad, hess = logdet_splus(self.structure, rho)
        ev = np.linalg.eigvalsh(self.dense)
        pos = ev[ev > 1e-10 * ev.max()]
        expected = 3 * 1.5 + np.sum(np.log(pos)) + 2 * -0.5 + np.log(4.0)
        self.assertAlmostEqual(value, expected, places=10)
        np.testing.assert_array_equal(grad, [3.0, 2.0])
        np.testing.assert_array_equal(hess, np.zeros((2, 2)))

    def test_indefinite_block_rejected(self):
        """Test an indefinite penalty fails validation"""
        from app.core.exceptions import BasisError

        structure = PenaltyStructure(2, [PenaltyBlock.single(0, np.diag([1.0, -1.0]), 0)])
        with self.assertRaises(BasisError):
            preprocess_blocks(structure)


class TestPreprocess(BaseTestCase):
    """Test stable reparameterization of blocks"""

    def test_preprocess_keeps_logdet(self):
        """Test the working structure gives the same log determinant"""
        D = np.diff(np.eye(6), n=2, axis=0)
        structure = PenaltyStructure(
            9,
            [PenaltyBlock.single(0, D.T @ D, 0), PenaltyBlock.single(6, np.diag([2.0, 0.5, 0.0]), 1)],
        )
        working = preprocess_blocks(structure)
        rho = np.array([0.7, 2.1])
        self.assertAlmostEqual(logdet_splus(working, rho)[0], logdet_splus(structure, rho)[0], places=9)

        # the transform maps working penalties back to the original ones
        T = working.transform_matrix()
        scale = np.exp(working.log_scale_vector())
        self.assertTrue(np.all(scale > 0.0))
        S_orig = assemble_S_lambda(structure, rho)
        S_work = assemble_S_lambda(working, rho)
        np.testing.assert_allclose(T.T @ S_orig @ T, S_work, atol=1e-9 * np.abs(S_orig).max())

    def test_restrict(self):
        """Test restricting a structure to a subset of coefficients"""
        structure = PenaltyStructure(4, [PenaltyBlock.single(0, np.diag([1.0, 2.0, 3.0]), 0)])
        restricted = structure.restrict(np.array([0, 2, 3]))
        self.assertEqual(restricted.P, 3)
        np.testing.assert_array_equal(restricted.penalty(0), np.diag([1.0, 3.0, 0.0]))


class TestMultiPenaltyBlocks(BaseTestCase):
    """Test overlapping penalties with very different smoothing parameters"""

    def setUp(self):
        super().setUp()
        A = np.array([[2.0, 0.0], [1.0, 1.0], [0.0, 3.0]])
        B = np.array([[1.0], [-2.0], [1.0]])
        C = np.array([[1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
        self.mats = [A @ A.T, B @ B.T, C @ C.T]
        self.block = PenaltyBlock.multi(0, self.mats, [0, 1, 2])
        self.structure = PenaltyStructure(3, [self.block])

    def test_exact_logdet_across_scales(self):
        """Test log|S|+ against exact arithmetic for ratios up to 1e12"""
        for rho in (
            np.array([0.0, 0.0, 0.0]),
            np.array([np.log(1e12), 0.0, 0.0]),
            np.array([0.0, np.log(1e12), -np.log(1e6)]),
            np.array([-np.log(1e6), np.log(1e6), 3.0]),
        ):
            value, _, _ = logdet_splus(self.structure, rho)
            exact = _exact_logdet(self.mats, np.exp(rho))
            self.assertLess(abs(value - exact), 1e-6 * (1.0 + abs(exact)), msg=f"rho={rho}")

    def test_derivatives_match_finite_differences(self):
        """Test the gradient and Hessian of log|S|+ in rho"""
        rho = np.array([0.4, -1.1, 2.0])
        _, grad, hess = logdet_splus(self.structure, rho)
        np.testing.assert_allclose(grad, fd_gradient(lambda r: logdet_splus(self.structure, r)[0], rho), rtol=1e-6, atol=1e-7)
        np.testing.assert_allclose(hess, fd_jacobian(lambda r: logdet_splus(self.structure, r)[1], rho), rtol=1e-5, atol=1e-6)

    def test_type3_transform_is_orthogonal(self):
        """Test the similarity transform and dominant-first ordering"""
        rho = np.array([np.log(1e10), 0.0, -np.log(1e4)])
        mats, q, r = reparameterize_type3(self.block, rho)
        self.assertEqual(r, 3)
        np.testing.assert_allclose(q.T @ q, np.eye(3), atol=1e-12)
        # the dominant penalty lives in the leading rows and columns only
        self.assertEqual(np.count_nonzero(np.abs(mats[0][2:, :]) > 0), 0)

    def test_rank_deficient_multi_block(self):
        """Test log|S|+ on a block whose penalties share a null space"""
        D = np.diff(np.eye(5), n=2, axis=0)
        S1 = D.T @ D
        D1 = np.diff(np.eye(5), n=1, axis=0)
        S2 = D1.T @ D1
        structure = PenaltyStructure(5, [PenaltyBlock.multi(0, [S1, S2], [0, 1])])
        rho = np.array([0.2, 1.3])
        value, _, _ = logdet_splus(structure, rho)
        total = np.exp(0.2) * S1 + np.exp(1.3) * S2
        ev = np.linalg.eigvalsh(total)
        expected = float(np.sum(np.log(ev[ev > 1e-10 * ev.max()])))
        self.assertAlmostEqual(value, expected, places=8)


@pytest.mark.unit
def test_exact_logdet_helper():
    """Test the rational determinant helper on a diagonal matrix"""
    mats = [np.diag([2.0, 3.0]), np.diag([1.0, 0.0])]
    assert abs(_exact_logdet(mats, np.array([1.0, 4.0])) - np.log(6.0 * 3.0)) < 1e-12
