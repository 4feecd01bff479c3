import json
import tempfile
import unittest
from pathlib import Path

import polars as pl

from projsplit.constants import TRACE_COLUMNS
from projsplit.problems.lasso import gen_lasso
from projsplit.solver import (
    BlockScheme,
    ProjectiveSplittingSolver,
    SolveOptions,
)
from projsplit.trace import (
    RunSummary,
    step_comparison_frame,
    stepsize_stats,
    summarize,
    write_frame,
    write_summary,
    write_trace,
)


def short_run(scheme=BlockScheme.ONE_STEP_BACKTRACK, iterations=12):
    setup = gen_lasso(15, 4, 0.1, seed=6, scheme=scheme)
    return ProjectiveSplittingSolver(
        setup.problem,
        SolveOptions(max_iters=iterations, stop_on_residual=False),
    ).run(setup.initial)


class TestSummary(unittest.TestCase):
    def test_summary_fields(self):
        result = short_run()
        summary = summarize('lasso', result, objective=1.5)
        self.assertEqual(summary.problem, 'lasso')
        self.assertEqual(summary.status, 'max_iters')
        self.assertEqual(summary.iterations, 12)
        self.assertEqual(summary.forward_evals, result.forward_evals)
        self.assertEqual(summary.objective, 1.5)
        self.assertIsNone(summary.relative_error)
        self.assertEqual(len(summary.stepsizes), 1)

    def test_stepsize_stats(self):
        stats = stepsize_stats(short_run().trace)[0]
        self.assertEqual(stats.block, 1)
        self.assertLessEqual(stats.rho_min, stats.rho_mean)
        self.assertLessEqual(stats.rho_mean, stats.rho_max)


class TestWriters(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def test_csv_trace(self):
        result = short_run()
        path = write_trace(result.trace, self.root / 'nested' / 'trace.csv')
        frame = pl.read_csv(path)
        self.assertEqual(frame.columns, TRACE_COLUMNS + ['rho_1', 'eta_1'])
        self.assertEqual(frame.height, 12)

    def test_json_trace(self):
        result = short_run()
        path = write_trace(result.trace, self.root / 'trace.json', 'json')
        rows = json.loads(path.read_text())
        self.assertEqual(len(rows), 12)
        self.assertEqual(rows[0]['iter'], 1)

    def test_unknown_format(self):
        with self.assertRaises(ValueError):
            write_frame(pl.DataFrame({'a': [1]}), self.root / 'x.parquet', 'xlsx')

    def test_summary_round_trip(self):
        summary = summarize('lasso', short_run())
        path = write_summary(summary, self.root / 'summary.json')
        self.assertEqual(RunSummary.model_validate_json(path.read_text()), summary)


class TestStepComparison(unittest.TestCase):
    def test_aligned_columns(self):
        one_step = short_run(iterations=10).trace
        two_step = short_run(BlockScheme.TWO_STEP_BACKTRACK, iterations=8).trace
        frame = step_comparison_frame(one_step, two_step)
        self.assertEqual(frame.columns, ['iter', 'rho_one_step', 'rho_two_step'])
        self.assertEqual(frame.height, 8)
        self.assertEqual(
            frame['rho_one_step'].to_list(),
            one_step.to_frame()['rho_1'].to_list()[:8],
        )
