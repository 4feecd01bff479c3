import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np
from pydantic import ValidationError

from projsplit.config import (
    RunConfig,
    RunConfigError,
    load_run_config,
    save_run_config,
)
from projsplit.constants import SEED_ENV_VAR
from projsplit.problems.lasso import lasso_objective
from projsplit.solver import BlockScheme


def clear_seed(case: unittest.TestCase):
    patcher = patch.dict(os.environ)
    patcher.start()
    case.addCleanup(patcher.stop)
    os.environ.pop(SEED_ENV_VAR, None)


class TestRunConfig(unittest.TestCase):
    def setUp(self):
        clear_seed(self)

    def test_missing_generator_params(self):
        with self.assertRaises(ValidationError) as raised:
            RunConfig(problem='portfolio')
        self.assertIn('requires: d, delta_r', str(raised.exception))

    def test_unknown_field_rejected(self):
        with self.assertRaises(ValidationError):
            RunConfig(problem='lasso', n=5, d=2, lam=0.1, colour='red')

    def test_unknown_problem_rejected(self):
        with self.assertRaises(ValidationError):
            RunConfig(problem='svm', n=5, d=2, lam=0.1)

    def test_beta_open_interval(self):
        with self.assertRaises(ValidationError):
            RunConfig(problem='portfolio', d=5, delta_r=1.0, beta=2.0)

    def test_seed_from_environment(self):
        with patch.dict(os.environ, {SEED_ENV_VAR: '42'}):
            self.assertEqual(RunConfig(problem='portfolio', d=5, delta_r=1.0).seed, 42)
            self.assertEqual(
                RunConfig(problem='portfolio', d=5, delta_r=1.0, seed=3).seed, 3
            )

    def test_seed_environment_must_be_integer(self):
        with patch.dict(os.environ, {SEED_ENV_VAR: 'abc'}):
            with self.assertRaises(ValidationError):
                RunConfig(problem='portfolio', d=5, delta_r=1.0)

    def test_setup_options_skip_unset_values(self):
        config = RunConfig(problem='portfolio', d=5, delta_r=1.0, alpha=0.2)
        options = config.setup_options()
        self.assertEqual(options['alpha'], 0.2)
        self.assertEqual(options['scheme'], BlockScheme.ONE_STEP_BACKTRACK)
        self.assertNotIn('gamma', options)
        self.assertNotIn('rho_hat', options)

    def test_build_setup_and_objective(self):
        config = RunConfig(problem='lasso', n=10, d=3, lam=0.1, seed=1, max_iters=7)
        setup = config.build_setup()
        self.assertEqual(setup.instance.dim, 3)

        options = config.solve_options(setup.instance)
        self.assertEqual(options.max_iters, 7)
        z = np.ones(3)
        self.assertEqual(options.objective(z), lasso_objective(z, setup.instance))

    def test_solve_options_overrides(self):
        config = RunConfig(problem='lasso', n=10, d=3, lam=0.1, seed=1)
        options = config.solve_options(stop_on_residual=False, trace_every=4)
        self.assertFalse(options.stop_on_residual)
        self.assertEqual(options.trace_every, 4)
        self.assertIsNone(options.objective)
        self.assertFalse(hasattr(options, 'seed'))

    def test_setup_for_resplits_instance(self):
        config = RunConfig(problem='portfolio', d=4, delta_r=1.0, seed=2)
        setup = config.build_setup()
        other = config.setup_for(
            setup.instance, scheme=BlockScheme.TWO_STEP_BACKTRACK
        )
        self.assertIs(other.instance, setup.instance)
        self.assertEqual(
            other.problem.blocks[0].scheme, BlockScheme.TWO_STEP_BACKTRACK
        )

    def test_group_count_capped_by_dimension(self):
        config = RunConfig(problem='group_logistic', n=10, d=4, lam=0.1, seed=0)
        self.assertEqual(len(config.build_setup().instance.groups), 4)


class TestRunConfigFiles(unittest.TestCase):
    def setUp(self):
        clear_seed(self)
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_round_trip(self):
        config = RunConfig(
            problem='rare_features',
            n=30,
            lam=0.01,
            leaves=8,
            depth=2,
            seed=5,
            scheme='two_step_backtrack',
            out_dir=Path(self.tmp.name) / 'out',
        )
        path = save_run_config(config, Path(self.tmp.name) / 'spec' / 'p.json')
        self.assertEqual(load_run_config(path), config)

    def test_missing_file(self):
        with self.assertRaises(RunConfigError):
            load_run_config(Path(self.tmp.name) / 'absent.json')

    def test_invalid_document(self):
        path = Path(self.tmp.name) / 'bad.json'
        path.write_text('{"problem": "lasso", "n": 0, "d": 2, "lam": 0.1}')
        with self.assertRaises(ValidationError):
            load_run_config(path)
