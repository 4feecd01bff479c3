import unittest

import numpy as np
from numpy.testing import assert_allclose

from projsplit.separator import (
    BlockPair,
    SeparatorError,
    block_separator_terms,
    eval_separator,
    project_to_hplane,
    separator_gradient,
)
from projsplit.spaces import (
    DimensionMismatchError,
    GammaMetric,
    LinearMap,
    PrimalDualPoint,
    gamma_distance_sq,
    gamma_inner,
)


def random_instance(rng, dims=(3, 2), primal=4):
    maps = [LinearMap.from_matrix(rng.standard_normal((d, primal))) for d in dims]
    maps.append(LinearMap.identity(primal))
    pairs = [
        BlockPair(rng.standard_normal(m.codomain_dim), rng.standard_normal(m.codomain_dim))
        for m in maps
    ]
    point = PrimalDualPoint(
        rng.standard_normal(primal),
        tuple(rng.standard_normal(d) for d in dims),
    )
    return point, pairs, maps


class TestEvalSeparator(unittest.TestCase):
    def test_scalar_by_hand(self):
        value = eval_separator(
            PrimalDualPoint(np.array([1.0])),
            [BlockPair(np.array([0.0]), np.array([1.0]))],
            [LinearMap.identity(1)],
        )
        self.assertEqual(value, 1.0)

    def test_vanishes_when_pairs_match_point(self):
        rng = np.random.default_rng(1)
        point, _, maps = random_instance(rng)
        duals = point.duals(maps)
        pairs = [
            BlockPair(m.apply(point.z), wi) for m, wi in zip(maps, duals)
        ]
        self.assertAlmostEqual(eval_separator(point, pairs, maps), 0.0)

    def test_both_forms_agree(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            point, pairs, maps = random_instance(rng)
            value = eval_separator(point, pairs, maps)
            terms = block_separator_terms(point, pairs, maps)
            self.assertAlmostEqual(
                value, sum(terms), delta=1e-9 * max(1.0, abs(value))
            )

    def test_last_map_must_be_identity(self):
        maps = [LinearMap.from_matrix(np.eye(1))]
        with self.assertRaises(SeparatorError):
            eval_separator(
                PrimalDualPoint(np.zeros(1)),
                [BlockPair(np.zeros(1), np.zeros(1))],
                maps,
            )

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            eval_separator(
                PrimalDualPoint(np.zeros(2)),
                [BlockPair(np.zeros(1), np.zeros(1))],
                [LinearMap.identity(1)],
            )

    def test_pair_needs_equal_shapes(self):
        with self.assertRaises(DimensionMismatchError):
            BlockPair(np.zeros(2), np.zeros(3))


class TestSeparatorGradient(unittest.TestCase):
    def test_single_block(self):
        pair = BlockPair(np.array([0.5]), np.array([2.0]))
        h = separator_gradient([pair], [LinearMap.identity(1)], GammaMetric(4.0))
        self.assertEqual(h.u, ())
        assert_allclose(h.v, [2.0])
        self.assertAlmostEqual(h.pi, 1.0)

    def test_directional_derivative(self):
        rng = np.random.default_rng(4)
        metric = GammaMetric(0.7)
        point, pairs, maps = random_instance(rng)
        h = separator_gradient(pairs, maps, metric)
        direction = PrimalDualPoint(
            rng.standard_normal(4), tuple(rng.standard_normal(d) for d in (3, 2))
        )
        step = 0.37
        moved = point + direction.scaled(step)
        change = h.phi(moved) - h.phi(point)
        expected = step * gamma_inner(h.gradient(), direction, metric)
        self.assertAlmostEqual(change, expected, places=10)

    def test_pi_is_gamma_norm_of_gradient(self):
        rng = np.random.default_rng(5)
        metric = GammaMetric(3.0)
        _, pairs, maps = random_instance(rng)
        h = separator_gradient(pairs, maps, metric)
        gradient = h.gradient()
        norm_sq = metric.gamma * float(gradient.z @ gradient.z) + sum(
            float(ui @ ui) for ui in gradient.w
        )
        self.assertAlmostEqual(h.pi, norm_sq)


class TestProjectToHplane(unittest.TestCase):
    def setUp(self):
        self.metric = GammaMetric(1.0)
        self.maps = [LinearMap.identity(1)]
        self.point = PrimalDualPoint(np.array([1.0]))
        self.h = separator_gradient(
            [BlockPair(np.array([0.0]), np.array([1.0]))], self.maps, self.metric
        )

    def test_scalar_by_hand(self):
        outcome = project_to_hplane(self.point, self.h, self.metric)
        self.assertFalse(outcome.terminal)
        self.assertAlmostEqual(outcome.pi, 1.0)
        self.assertAlmostEqual(outcome.tau, 1.0)
        assert_allclose(outcome.next_point.z, [0.0])

    def test_reflection_with_beta_two_limit(self):
        outcome = project_to_hplane(
            self.point, self.h, self.metric, beta=1.999999
        )
        assert_allclose(outcome.next_point.z, [-1.0], atol=1e-5)
        solution = PrimalDualPoint(np.zeros(1))
        self.assertAlmostEqual(
            gamma_distance_sq(outcome.next_point, solution, self.metric),
            gamma_distance_sq(self.point, solution, self.metric),
            places=4,
        )

    def test_nonpositive_phi_keeps_point(self):
        point = PrimalDualPoint(np.array([-1.0]))
        outcome = project_to_hplane(point, self.h, self.metric)
        self.assertEqual(outcome.tau, 0.0)
        self.assertIs(outcome.next_point, point)

    def test_projection_lands_on_hyperplane(self):
        rng = np.random.default_rng(6)
        metric = GammaMetric(0.2)
        for _ in range(20):
            point, pairs, maps = random_instance(rng)
            h = separator_gradient(pairs, maps, metric)
            phi = h.phi(point)
            outcome = project_to_hplane(point, h, metric)
            if phi > 0:
                self.assertLessEqual(
                    abs(h.phi(outcome.next_point)), 1e-8 * max(1.0, abs(phi))
                )

    def test_terminal_when_pi_vanishes(self):
        maps = [LinearMap.identity(2), LinearMap.identity(2)]
        x = np.array([1.0, 2.0])
        y = np.array([0.5, -0.5])
        pairs = [BlockPair(x, y), BlockPair(x, -y)]
        h = separator_gradient(pairs, maps, self.metric)
        point = PrimalDualPoint(np.zeros(2), (np.zeros(2),))
        outcome = project_to_hplane(point, h, self.metric)
        self.assertTrue(outcome.terminal)
        assert_allclose(outcome.next_point.z, x)
        assert_allclose(outcome.next_point.w[0], y)

    def test_beta_out_of_range(self):
        with self.assertRaises(SeparatorError):
            project_to_hplane(self.point, self.h, self.metric, beta=2.0)

    def test_metric_must_match(self):
        with self.assertRaises(SeparatorError):
            project_to_hplane(self.point, self.h, GammaMetric(2.0))
