import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from projsplit.operators.base import ForwardOperator, Resolvent
from projsplit.operators.prox import ProxKind, ProxSpec, resolvent_from_prox
from projsplit.reductions import (
    fb_limit_check,
    fb_step_equivalence,
    tseng_equivalence_step,
)


def soft(scale=1.0, dim=1):
    return resolvent_from_prox(ProxSpec(ProxKind.L1, scale=scale), dim)


def scalar_lasso_forward():
    return ForwardOperator(lambda x: x - 3.0, dim=1, lipschitz=1.0)


class TestForwardBackwardStep(unittest.TestCase):
    def test_soft_threshold_by_hand(self):
        forward = ForwardOperator(lambda x: x, dim=1, lipschitz=1.0)
        mapped, direct = fb_step_equivalence(
            soft(), forward, 0.5, np.array([3.0]), z=np.array([-8.0])
        )
        assert_array_equal(mapped, [1.0])
        assert_array_equal(direct, [1.0])

    def test_zero_operators(self):
        x = np.array([0.3, -1.2])
        mapped, direct = fb_step_equivalence(
            Resolvent.identity(), ForwardOperator.zero(2), 1.0, x
        )
        assert_array_equal(mapped, x)
        assert_array_equal(direct, x)

    def test_random_instances_are_bit_identical(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            dim = int(rng.integers(1, 4))
            M = rng.standard_normal((dim, dim))
            forward = ForwardOperator(lambda x, M=M: M.T @ (M @ x), dim=dim)
            mapped, direct = fb_step_equivalence(
                soft(float(rng.uniform(0, 2)), dim),
                forward,
                float(rng.uniform(0.01, 2.0)),
                rng.standard_normal(dim),
                z=rng.standard_normal(dim),
            )
            assert_array_equal(mapped, direct)


class TestForwardBackwardLimit(unittest.TestCase):
    def setUp(self):
        self.frame = fb_limit_check(
            soft(),
            scalar_lasso_forward(),
            0.5,
            np.zeros(1),
            [0.5, 0.1, 0.01, 0.001, 0.0],
            iterations=50,
        )

    def test_columns(self):
        self.assertEqual(self.frame.columns, ['alpha', 'gap'])
        self.assertEqual(self.frame.height, 5)

    def test_direct_map_matches_exactly(self):
        self.assertEqual(self.frame['gap'].to_list()[-1], 0.0)

    def test_gap_shrinks_with_alpha(self):
        gaps = self.frame['gap'].to_list()[:4]
        self.assertLess(gaps[3], 0.05)
        self.assertGreater(gaps[0], gaps[2])
        for larger, smaller in zip(gaps, gaps[1:]):
            self.assertGreaterEqual(larger, smaller)


class TestTsengStep(unittest.TestCase):
    def test_scalar_by_hand(self):
        resolvent = soft()
        report = tseng_equivalence_step(
            resolvent,
            ForwardOperator(lambda x: x, dim=1, lipschitz=1.0),
            0.5,
            1.0,
            np.array([1.0]),
        )
        self.assertAlmostEqual(report.rho_tilde, 1.0)
        assert_allclose(report.z_plus_projective, [0.0], atol=1e-15)
        assert_allclose(report.z_plus_tseng_form, [0.0], atol=1e-15)
        self.assertEqual(report.resolvent_evaluations, 1)
        self.assertFalse(report.terminal)

    def test_constant_forward_keeps_stepsize(self):
        report = tseng_equivalence_step(
            soft(0.5, 2),
            ForwardOperator.constant_map(np.array([1.0, -1.0])),
            0.7,
            2.0,
            np.array([3.0, 0.2]),
        )
        self.assertAlmostEqual(report.rho_tilde, 0.7)
        self.assertLess(report.discrepancy, 1e-12)

    def test_solution_is_terminal(self):
        report = tseng_equivalence_step(
            Resolvent.identity(),
            ForwardOperator.zero(1),
            1.0,
            1.0,
            np.array([4.0]),
        )
        self.assertTrue(report.terminal)
        assert_allclose(report.z_plus_projective, [4.0])

    def test_random_instances(self):
        rng = np.random.default_rng(13)
        for trial in range(100):
            dim = 1 if trial % 2 == 0 else 3
            M = rng.standard_normal((dim, dim))
            Q = M @ M.T
            L = float(np.linalg.eigvalsh(Q).max())
            shift = rng.standard_normal(dim)
            forward = ForwardOperator(
                lambda x, Q=Q, shift=shift: Q @ x + shift,
                dim=dim,
                lipschitz=L,
            )
            resolvent = soft(float(rng.uniform(0, 1)), dim)
            report = tseng_equivalence_step(
                resolvent,
                forward,
                float(rng.uniform(0.1, 0.9)) / L,
                float(rng.uniform(0.1, 10.0)),
                rng.standard_normal(dim),
            )
            self.assertEqual(resolvent.evaluations, 1)
            if not report.terminal:
                self.assertLess(
                    report.discrepancy,
                    1e-10 * max(1.0, abs(report.rho_tilde)),
                )
