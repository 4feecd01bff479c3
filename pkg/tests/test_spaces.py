import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from scipy import sparse

from projsplit.spaces import (
    DimensionMismatchError,
    GammaMetric,
    InvalidMetricError,
    LinearMap,
    NonFiniteValueError,
    PrimalDualPoint,
    apply_adjoint,
    as_vector,
    gamma_distance_sq,
    gamma_inner,
    gamma_norm_sq,
)


class TestAsVector(unittest.TestCase):
    def test_scalar_becomes_length_one(self):
        self.assertEqual(as_vector(3.0).shape, (1,))

    def test_result_is_read_only(self):
        vector = as_vector([1.0, 2.0])
        with self.assertRaises(ValueError):
            vector[0] = 5.0

    def test_rejects_nan(self):
        with self.assertRaises(NonFiniteValueError):
            as_vector([1.0, np.nan])

    def test_rejects_matrix(self):
        with self.assertRaises(DimensionMismatchError):
            as_vector(np.ones((2, 2)))


class TestGammaMetric(unittest.TestCase):
    def test_norm_of_zero_point(self):
        point = PrimalDualPoint(np.zeros(1))
        self.assertEqual(gamma_norm_sq(point, GammaMetric(1.0)), 0.0)

    def test_norm_weights_primal_part(self):
        point = PrimalDualPoint(np.array([1.0]), (np.array([1.0]),))
        self.assertAlmostEqual(gamma_norm_sq(point, GammaMetric(2.0)), 3.0)

    def test_norm_half_gamma(self):
        point = PrimalDualPoint(np.array([3.0, 4.0]), (np.zeros(2),))
        self.assertAlmostEqual(gamma_norm_sq(point, GammaMetric(0.5)), 12.5)

    def test_inner_by_hand(self):
        p1 = PrimalDualPoint(np.array([1.0]), (np.array([3.0]),))
        p2 = PrimalDualPoint(np.array([2.0]), (np.array([4.0]),))
        self.assertAlmostEqual(gamma_inner(p1, p2, GammaMetric(1.0)), 14.0)

    def test_inner_matches_norm(self):
        rng = np.random.default_rng(3)
        point = PrimalDualPoint(
            rng.standard_normal(4), (rng.standard_normal(2),)
        )
        metric = GammaMetric(0.3)
        self.assertAlmostEqual(
            gamma_inner(point, point, metric), gamma_norm_sq(point, metric)
        )

    def test_orthogonal_points(self):
        p1 = PrimalDualPoint(np.array([1.0, 0.0]), (np.array([0.0]),))
        p2 = PrimalDualPoint(np.array([0.0, 1.0]), (np.array([0.0]),))
        self.assertEqual(gamma_inner(p1, p2, GammaMetric(5.0)), 0.0)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(11)
        metric = GammaMetric(2.5)
        for _ in range(50):
            a, b, c = (
                PrimalDualPoint(
                    rng.standard_normal(3), (rng.standard_normal(2),)
                )
                for _ in range(3)
            )
            ab = np.sqrt(gamma_distance_sq(a, b, metric))
            bc = np.sqrt(gamma_distance_sq(b, c, metric))
            ac = np.sqrt(gamma_distance_sq(a, c, metric))
            self.assertLessEqual(ac, ab + bc + 1e-12)

    def test_rejects_nonpositive_gamma(self):
        with self.assertRaises(InvalidMetricError):
            GammaMetric(0.0)
        with self.assertRaises(InvalidMetricError):
            GammaMetric(-1.0)

    def test_mismatched_points(self):
        p1 = PrimalDualPoint(np.zeros(2))
        p2 = PrimalDualPoint(np.zeros(3))
        with self.assertRaises(DimensionMismatchError):
            gamma_inner(p1, p2, GammaMetric())


class TestLinearMap(unittest.TestCase):
    def test_identity_is_bit_exact(self):
        y = np.array([0.1, -2.0, 3.3])
        identity = LinearMap.identity(3)
        self.assertIs(identity.apply(y), y)
        assert_array_equal(apply_adjoint(identity, y), y)

    def test_adjoint_by_hand(self):
        G = LinearMap.from_matrix(np.array([[1.0, 2.0], [3.0, 4.0]]))
        assert_array_equal(apply_adjoint(G, np.ones(2)), [4.0, 6.0])

    def test_adjoint_identity_dense_and_sparse(self):
        rng = np.random.default_rng(0)
        dense = rng.standard_normal((7, 64))
        maps = [
            LinearMap.from_matrix(dense),
            LinearMap.from_matrix(sparse.random(40, 64, 0.1, random_state=1)),
        ]
        for linear_map in maps:
            x = rng.standard_normal(linear_map.domain_dim)
            y = rng.standard_normal(linear_map.codomain_dim)
            left = float(linear_map.apply(x) @ y)
            right = float(x @ linear_map.apply_adjoint(y))
            self.assertAlmostEqual(left, right, delta=1e-12 * max(1, abs(left)))

    def test_double_adjoint_is_original(self):
        matrix = np.arange(6.0).reshape(2, 3)
        G = LinearMap.from_matrix(matrix)
        x = np.array([1.0, -1.0, 2.0])
        assert_array_equal(G.adjoint().adjoint().apply(x), G.apply(x))
        self.assertEqual(G.adjoint().shape, (3, 2))
        assert_array_equal(G.adjoint().to_dense(), matrix.T)

    def test_shape_checks(self):
        G = LinearMap.from_matrix(np.ones((2, 3)))
        with self.assertRaises(DimensionMismatchError):
            G.apply(np.ones(2))
        with self.assertRaises(DimensionMismatchError):
            G.apply_adjoint(np.ones(3))


class TestPrimalDualPoint(unittest.TestCase):
    def test_single_block_has_zero_dual(self):
        point = PrimalDualPoint(np.array([1.0, 2.0]))
        duals = point.duals([LinearMap.identity(2)])
        self.assertEqual(len(duals), 1)
        assert_array_equal(duals[0], [0.0, 0.0])

    def test_last_dual_is_derived(self):
        G = LinearMap.from_matrix(np.array([[1.0, 0.0], [1.0, 1.0]]))
        point = PrimalDualPoint(np.zeros(2), (np.array([1.0, 2.0]),))
        w_last = point.last_dual([G, LinearMap.identity(2)])
        assert_allclose(w_last, [-3.0, -2.0])

    def test_arithmetic(self):
        p = PrimalDualPoint(np.array([1.0]), (np.array([2.0]),))
        q = PrimalDualPoint(np.array([0.5]), (np.array([1.0]),))
        assert_allclose((p - q).z, [0.5])
        assert_allclose((p + q).w[0], [3.0])
        assert_allclose(p.scaled(2.0).w[0], [4.0])

    def test_map_count_must_match(self):
        point = PrimalDualPoint(np.zeros(1), (np.zeros(1),))
        with self.assertRaises(DimensionMismatchError):
            point.last_dual([LinearMap.identity(1)])
