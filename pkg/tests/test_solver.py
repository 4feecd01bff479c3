import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from projsplit.block_updates import BlockConfigError, OneStepParams
from projsplit.constants import TRACE_COLUMNS
from projsplit.operators.base import ForwardOperator, Resolvent
from projsplit.operators.prox import ProxKind, ProxSpec, resolvent_from_prox
from projsplit.problems.base import relative_error
from projsplit.problems.lasso import gen_lasso, scalar_lasso
from projsplit.problems.portfolio import (
    enumerate_portfolio,
    gen_portfolio,
    portfolio_objective,
)
from projsplit.solver import (
    BlockScheme,
    BlockSpec,
    InitialState,
    ProblemSpec,
    ProblemSpecError,
    ProjectiveSplittingSolver,
    SolveOptions,
    SolverError,
    SolveStatus,
    kkt_check,
    residuals,
)
from projsplit.spaces import (
    GammaMetric,
    InvalidMetricError,
    LinearMap,
    PrimalDualPoint,
)


def zero_block(dim=1, alpha=1.0, rho=1.0):
    return BlockSpec(
        Resolvent.identity(),
        ForwardOperator.zero(dim),
        LinearMap.identity(dim),
        BlockScheme.ONE_STEP_FIXED,
        params=OneStepParams(alpha, rho),
    )


def split_scalar_lasso():
    """0 in d|z| + (z - 3) with the two operators in separate blocks."""
    l1 = BlockSpec(
        resolvent_from_prox(ProxSpec(ProxKind.L1), 1),
        ForwardOperator.zero(1),
        LinearMap.identity(1),
        BlockScheme.ONE_STEP_FIXED,
        params=OneStepParams(1.0, 1.0),
    )
    smooth = BlockSpec(
        Resolvent.identity(),
        ForwardOperator(lambda x: x - 3.0, dim=1, lipschitz=1.0),
        LinearMap.identity(1),
        BlockScheme.ONE_STEP_FIXED,
        params=OneStepParams(0.5, 0.5),
    )
    return ProblemSpec([l1, smooth])


class TestSolveTrivial(unittest.TestCase):
    def test_zero_operators_stop_at_first_iteration(self):
        problem = ProblemSpec([zero_block()])
        initial = InitialState(PrimalDualPoint(np.array([5.0])), [np.zeros(1)])
        result = ProjectiveSplittingSolver(problem).run(initial)

        self.assertEqual(result.status, SolveStatus.TERMINAL_PI_ZERO)
        self.assertEqual(result.iterations, 1)
        assert_allclose(result.z, [5.0])
        self.assertEqual(len(result.trace), 1)

    def test_max_iters_status(self):
        setup = gen_lasso(20, 5, 0.1, seed=1)
        result = ProjectiveSplittingSolver(
            setup.problem, SolveOptions(max_iters=1)
        ).run(setup.initial)
        self.assertEqual(result.status, SolveStatus.MAX_ITERS)
        self.assertEqual(result.iterations, 1)


class TestSolveLasso(unittest.TestCase):
    def test_scalar_lasso_backtracking(self):
        setup = scalar_lasso()
        result = ProjectiveSplittingSolver(
            setup.problem, SolveOptions(max_iters=5000)
        ).run(setup.initial)
        self.assertLess(abs(result.z[0] - 2.0), 1e-6)
        self.assertTrue(kkt_check(result, setup.problem, tol=1e-5).passed)

    def test_scalar_lasso_fixed_step(self):
        setup = scalar_lasso(scheme=BlockScheme.ONE_STEP_FIXED)
        result = ProjectiveSplittingSolver(
            setup.problem, SolveOptions(max_iters=5000)
        ).run(setup.initial)
        self.assertLess(abs(result.z[0] - 2.0), 1e-6)

    def test_two_blocks_any_order(self):
        ordered = ProjectiveSplittingSolver(
            split_scalar_lasso(), SolveOptions(max_iters=5000)
        ).run(InitialState.zeros(split_scalar_lasso()))
        reversed_order = ProjectiveSplittingSolver(
            split_scalar_lasso(),
            SolveOptions(max_iters=5000, block_order=[1, 0]),
        ).run(InitialState.zeros(split_scalar_lasso()))

        assert_array_equal(ordered.z, reversed_order.z)
        self.assertEqual(ordered.iterations, reversed_order.iterations)
        self.assertLess(abs(ordered.z[0] - 2.0), 1e-4)


class TestSolvePortfolio(unittest.TestCase):
    def test_matches_enumeration(self):
        setup = gen_portfolio(5, 1.0, seed=0)
        reference = enumerate_portfolio(setup.instance)
        result = ProjectiveSplittingSolver(
            setup.problem, SolveOptions(max_iters=20000, residual_tol=1e-9)
        ).run(setup.initial)

        objective = portfolio_objective(result.z, setup.instance)
        self.assertLess(
            abs(relative_error(objective, reference.objective)), 1e-3
        )
        self.assertAlmostEqual(float(np.sum(result.z)), 1.0, delta=1e-3)

    def test_linked_block_reuses_stepsize(self):
        setup = gen_portfolio(5, 1.0, seed=2)
        result = ProjectiveSplittingSolver(
            setup.problem, SolveOptions(max_iters=30, stop_on_residual=False)
        ).run(setup.initial)
        frame = result.trace.to_frame()
        assert_array_equal(frame['rho_1'].to_numpy(), frame['rho_2'].to_numpy())

    def test_linked_block_must_follow_its_source(self):
        setup = gen_portfolio(5, 1.0, seed=2)
        solver = ProjectiveSplittingSolver(
            setup.problem, SolveOptions(block_order=[1, 0])
        )
        with self.assertRaises(SolverError):
            solver.run(setup.initial)


class TestForwardEvaluations(unittest.TestCase):
    def test_fixed_step_counts_one_per_iteration(self):
        setup = gen_lasso(20, 5, 0.1, seed=3, scheme=BlockScheme.ONE_STEP_FIXED)
        result = ProjectiveSplittingSolver(
            setup.problem, SolveOptions(max_iters=40, stop_on_residual=False)
        ).run(setup.initial)

        forward = setup.problem.blocks[0].forward
        self.assertEqual(result.forward_evals, result.iterations)
        self.assertEqual(
            forward.evaluations,
            result.forward_evals + result.initial_forward_evals,
        )
        self.assertEqual(
            int(result.trace.column('fwd_evals')[-1]), result.forward_evals
        )

    def test_kkt_check_leaves_counters(self):
        setup = gen_lasso(20, 5, 0.1, seed=3, scheme=BlockScheme.ONE_STEP_FIXED)
        result = ProjectiveSplittingSolver(
            setup.problem, SolveOptions(max_iters=10, stop_on_residual=False)
        ).run(setup.initial)
        block = setup.problem.blocks[0]
        forward_before = block.forward.evaluations
        resolvent_before = block.resolvent.evaluations

        kkt_check(result, setup.problem)
        kkt_check(result.point, setup.problem)

        self.assertEqual(block.forward.evaluations, forward_before)
        self.assertEqual(block.resolvent.evaluations, resolvent_before)
        self.assertEqual(
            block.forward.evaluations,
            result.forward_evals + result.initial_forward_evals,
        )

    def test_two_step_counts_two_per_iteration(self):
        setup = gen_lasso(20, 5, 0.1, seed=3, scheme=BlockScheme.TWO_STEP)
        result = ProjectiveSplittingSolver(
            setup.problem, SolveOptions(max_iters=40, stop_on_residual=False)
        ).run(setup.initial)
        self.assertEqual(result.forward_evals, 2 * result.iterations)

    def test_backtracking_counts_trials(self):
        setup = gen_lasso(20, 5, 0.1, seed=4, rho=100.0, rho_hat=100.0)
        trials = []
        options = SolveOptions(
            max_iters=30,
            stop_on_residual=False,
            callback=lambda snapshot: trials.append(snapshot.states[0].trials),
        )
        result = ProjectiveSplittingSolver(setup.problem, options).run(
            setup.initial
        )
        self.assertEqual(result.forward_evals, sum(trials))
        self.assertGreater(trials[0], 1)


class TestTrace(unittest.TestCase):
    def test_columns_and_sampling(self):
        setup = gen_lasso(20, 5, 0.1, seed=5)
        result = ProjectiveSplittingSolver(
            setup.problem,
            SolveOptions(max_iters=25, stop_on_residual=False, trace_every=10),
        ).run(setup.initial)

        frame = result.trace.to_frame()
        self.assertEqual(frame.columns, TRACE_COLUMNS + ['rho_1', 'eta_1'])
        self.assertEqual(frame['iter'].to_list(), [10, 20])
        self.assertTrue(frame['obj'].is_null().all())

    def test_objective_column(self):
        setup = scalar_lasso()
        result = ProjectiveSplittingSolver(
            setup.problem,
            SolveOptions(max_iters=3, stop_on_residual=False, objective=lambda z: 7.0),
        ).run(setup.initial)
        self.assertEqual(result.trace.to_frame()['obj'].to_list()[0], 7.0)


class TestResiduals(unittest.TestCase):
    def test_kkt_fails_away_from_solution(self):
        setup = scalar_lasso()
        report = kkt_check(PrimalDualPoint(np.zeros(1)), setup.problem)
        self.assertFalse(report.passed)
        self.assertAlmostEqual(report.block_residuals[0], 2.0)
        self.assertEqual(report.consistency, 0.0)

    def test_single_block_dual_residual(self):
        setup = scalar_lasso()
        result = ProjectiveSplittingSolver(
            setup.problem, SolveOptions(max_iters=2, stop_on_residual=False)
        ).run(setup.initial)
        report = residuals(result.point, result.states, setup.problem.maps)
        self.assertAlmostEqual(
            report.dual[0], float(np.linalg.norm(result.states[0].y))
        )


class TestValidation(unittest.TestCase):
    def test_last_block_needs_identity(self):
        block = zero_block()
        block.linear_map = LinearMap.from_matrix(np.array([[2.0]]))
        with self.assertRaises(ProblemSpecError):
            ProjectiveSplittingSolver(ProblemSpec([block]))

    def test_beta_open_interval(self):
        with self.assertRaises(ProblemSpecError):
            ProjectiveSplittingSolver(ProblemSpec([zero_block()], beta=2.0))

    def test_scheme_needs_parameters(self):
        block = BlockSpec(
            Resolvent.identity(),
            ForwardOperator.zero(1),
            LinearMap.identity(1),
            BlockScheme.ONE_STEP_BACKTRACK,
        )
        with self.assertRaises(ProblemSpecError):
            ProjectiveSplittingSolver(ProblemSpec([block]))

    def test_fixed_step_too_large(self):
        block = BlockSpec(
            Resolvent.identity(),
            ForwardOperator(lambda x: x, dim=1, lipschitz=1.0),
            LinearMap.identity(1),
            BlockScheme.ONE_STEP_FIXED,
            params=OneStepParams(0.5, 2.0),
        )
        with self.assertRaises(BlockConfigError):
            ProjectiveSplittingSolver(ProblemSpec([block]))

    def test_initial_shape_checked(self):
        solver = ProjectiveSplittingSolver(ProblemSpec([zero_block(dim=2)]))
        with self.assertRaises(ProblemSpecError):
            solver.run(
                InitialState(PrimalDualPoint(np.zeros(3)), [np.zeros(2)])
            )

    def test_options(self):
        with self.assertRaises(SolverError):
            SolveOptions(max_iters=0)
        with self.assertRaises(SolverError):
            SolveOptions(pi_tol=0.0)
        with self.assertRaises(SolverError):
            SolveOptions(trace_every=0)

    def test_options_carry_no_seed(self):
        with self.assertRaises(TypeError):
            SolveOptions(seed=1)

    def test_block_order_must_be_permutation(self):
        solver = ProjectiveSplittingSolver(
            split_scalar_lasso(), SolveOptions(block_order=[0, 0])
        )
        with self.assertRaises(SolverError):
            solver.run(InitialState.zeros(split_scalar_lasso()))

    def test_gamma_must_be_positive(self):
        with self.assertRaises(InvalidMetricError):
            ProblemSpec([zero_block()], metric=GammaMetric(-1.0))
