import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np
import polars as pl
from kami_logging import benchmark_with, logging_with
from pydantic import ValidationError

from projsplit.audit import DEFAULT_AUDIT_TOL, audit_solve
from projsplit.block_updates import (
    BacktrackingError,
    BlockConfigError,
    TrialRule,
)
from projsplit.config import (
    RunConfig,
    RunConfigError,
    load_run_config,
    save_run_config,
)
from projsplit.constants import (
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    EXIT_PROPERTY_VIOLATED,
    EXIT_SOLVER_ERROR,
)
from projsplit.operators.base import OperatorConfigError
from projsplit.problems import reference_solve
from projsplit.problems.base import (
    ExperimentSetup,
    ProblemConfigError,
    ReferenceSolveError,
    relative_error,
)
from projsplit.problems.portfolio import portfolio_criterion
from projsplit.solver import (
    BlockScheme,
    ProblemSpecError,
    ProjectiveSplittingSolver,
    SolverError,
    solve,
)
from projsplit.spaces import NonFiniteValueError
from projsplit.trace import (
    step_comparison_frame,
    summarize,
    write_frame,
    write_summary,
    write_trace,
)

cli_logger = logging.getLogger('Projsplit CLI')

CONFIG_ERRORS = (
    ValidationError,
    RunConfigError,
    ProblemSpecError,
    BlockConfigError,
    OperatorConfigError,
    ProblemConfigError,
)
SOLVER_ERRORS = (
    SolverError,
    BacktrackingError,
    NonFiniteValueError,
    ReferenceSolveError,
)

# flag name -> (type, help); every flag is the kebab-case of a RunConfig field
RUN_FLAGS: Dict[str, tuple] = {
    'problem': (
        str,
        'portfolio, group_logistic, rare_features or lasso',
    ),
    'seed': (int, 'random seed (falls back to $PROJSPLIT_SEED)'),
    'd': (int, 'number of features or assets'),
    'n': (int, 'number of samples'),
    'delta-r': (float, 'portfolio return level relative to the mean'),
    'lam': (float, 'regularization weight'),
    'mu': (float, 'rare features: split of lam between nodes and leaves'),
    'leaves': (int, 'rare features: leaves of the tree'),
    'depth': (int, 'rare features: depth of the tree'),
    'n-groups': (int, 'group logistic: number of contiguous groups'),
    'gamma': (float, 'primal-dual metric weight'),
    'beta': (float, 'projection relaxation in (0, 2)'),
    'alpha': (float, 'averaging weight of the smooth block'),
    'rho': (float, 'fixed stepsize, or initial stepsize when backtracking'),
    'delta': (float, 'backtracking decrement in (0, 1)'),
    'rho-hat': (float, 'backtracking stepsize cap'),
    'max-iters': (int, 'iteration limit'),
    'residual-tol': (float, 'stop when the aggregate residual drops below'),
    'pi-tol': (float, 'terminal threshold on pi'),
    'trace-every': (int, 'record every k-th iteration'),
    'out-dir': (Path, 'directory for traces and summaries'),
}


def _add_run_flags(parser: argparse.ArgumentParser):
    parser.add_argument(
        '--config', type=Path, help='problem-spec JSON written by `gen`'
    )
    for flag, (kind, text) in RUN_FLAGS.items():
        parser.add_argument(f'--{flag}', type=kind, help=text)
    parser.add_argument(
        '--scheme',
        choices=[scheme.value for scheme in BlockScheme],
        help='update scheme of the smooth block',
    )
    parser.add_argument(
        '--trial-rule',
        choices=[rule.value for rule in TrialRule],
        help='first backtracking trial',
    )
    parser.add_argument('--trace-format', choices=['csv', 'json'])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='projsplit',
        description='Projective splitting with one-forward-step block updates.',
    )
    parser.add_argument(
        '--log-level',
        default='WARNING',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
    )
    commands = parser.add_subparsers(dest='command', required=True)

    run = commands.add_parser('run', help='solve and write trace + summary')
    _add_run_flags(run)

    verify = commands.add_parser(
        'verify', help='solve while auditing the per-iteration guarantees'
    )
    _add_run_flags(verify)
    verify.add_argument('--audit-tol', type=float, default=DEFAULT_AUDIT_TOL)

    compare = commands.add_parser(
        'compare-steps',
        help='one-forward-step against two-forward-step backtracking',
    )
    _add_run_flags(compare)

    gen = commands.add_parser('gen', help='write a problem-spec file')
    _add_run_flags(gen)
    gen.add_argument('--output', type=Path)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge the spec file (if any) with the flags; flags win."""
    data: Dict[str, Any] = {}
    if args.config is not None:
        data = load_run_config(args.config).model_dump(exclude_unset=True)

    for flag in list(RUN_FLAGS) + ['scheme', 'trial-rule', 'trace-format']:
        field = flag.replace('-', '_')
        value = getattr(args, field)
        if value is not None:
            data[field] = value
    return RunConfig.model_validate(data)


def prepare_setup(config: RunConfig) -> ExperimentSetup:
    """Generate the instance and reject an invalid splitting before any solve."""
    setup = config.build_setup()
    # the solver constructor runs the structural and stepsize checks
    ProjectiveSplittingSolver(setup.problem)
    return setup


@benchmark_with(cli_logger)
@logging_with(cli_logger)
def cmd_run(
    config: RunConfig, setup: Optional[ExperimentSetup] = None
) -> int:
    if setup is None:
        setup = config.build_setup()
    options = config.solve_options(setup.instance)
    result = solve(setup.problem, setup.initial, options)
    objective = options.objective(result.z)

    reference_objective = error = criterion = None
    if config.problem == 'portfolio':
        reference = reference_solve(setup.instance)
        reference_objective = reference.objective
        error = relative_error(objective, reference.objective)
        criterion = portfolio_criterion(
            result.z, setup.instance, reference.objective
        )

    summary = summarize(
        config.problem,
        result,
        objective=objective,
        reference_objective=reference_objective,
        relative_error=error,
        criterion=criterion,
    )
    out_dir = Path(config.out_dir)
    write_trace(
        result.trace,
        out_dir / f'trace.{config.trace_format}',
        config.trace_format,
    )
    write_summary(summary, out_dir / 'summary.json')
    print(summary.model_dump_json(indent=2))
    return EXIT_OK


@benchmark_with(cli_logger)
@logging_with(cli_logger)
def cmd_verify(
    config: RunConfig,
    audit_tol: float = DEFAULT_AUDIT_TOL,
    setup: Optional[ExperimentSetup] = None,
) -> int:
    if setup is None:
        setup = config.build_setup()
    options = config.solve_options(setup.instance)

    reference = None
    try:
        solution = reference_solve(setup.instance)
        if len(solution.duals) == setup.problem.n_blocks - 1:
            reference = solution.as_point()
    except ReferenceSolveError:
        cli_logger.warning(
            'No reference solution; skipping separator and Fejer audits.'
        )

    result, report = audit_solve(
        setup.problem, setup.initial, options, reference, audit_tol
    )
    frame = report.to_frame()
    write_frame(frame, Path(config.out_dir) / 'audit.csv')

    with pl.Config(tbl_rows=-1, fmt_str_lengths=40):
        print(frame)
    print(
        f'status={result.status.value} iterations={result.iterations} '
        f'kkt_residual={report.kkt_residual:.3e}'
    )
    return EXIT_OK if report.passed else EXIT_PROPERTY_VIOLATED


@benchmark_with(cli_logger)
@logging_with(cli_logger)
def cmd_compare_steps(
    config: RunConfig, setup: Optional[ExperimentSetup] = None
) -> int:
    if setup is None:
        setup = config.build_setup()
    instance = setup.instance
    options = config.solve_options(
        instance, stop_on_residual=False, trace_every=1
    )

    results = {}
    for scheme in (
        BlockScheme.ONE_STEP_BACKTRACK,
        BlockScheme.TWO_STEP_BACKTRACK,
    ):
        scheme_setup = config.setup_for(instance, scheme=scheme)
        results[scheme] = solve(
            scheme_setup.problem, scheme_setup.initial, options
        )

    one_step = results[BlockScheme.ONE_STEP_BACKTRACK]
    two_step = results[BlockScheme.TWO_STEP_BACKTRACK]
    out_dir = Path(config.out_dir)
    write_frame(
        step_comparison_frame(one_step.trace, two_step.trace),
        out_dir / 'steps.csv',
    )

    totals = pl.DataFrame(
        {
            'scheme': [scheme.value for scheme in results],
            'iterations': [r.iterations for r in results.values()],
            'forward_evals': [r.forward_evals for r in results.values()],
        }
    ).with_columns(
        (pl.col('forward_evals') / pl.col('iterations')).alias(
            'evals_per_iter'
        )
    )
    write_frame(totals, out_dir / 'forward_evals.csv')
    print(totals)
    return EXIT_OK


@benchmark_with(cli_logger)
@logging_with(cli_logger)
def cmd_gen(config: RunConfig, output: Optional[Path] = None) -> int:
    if config.seed is None:
        config = config.model_copy(
            update={'seed': int(np.random.SeedSequence().entropy % 2**32)}
        )
    config.build_setup()
    path = save_run_config(
        config, output or Path(config.out_dir) / 'problem.json'
    )
    print(path)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level)

    try:
        config = resolve_config(args)
        if args.command == 'gen':
            return cmd_gen(config, args.output)

        setup = prepare_setup(config)
        if args.command == 'run':
            return cmd_run(config, setup)
        if args.command == 'verify':
            return cmd_verify(config, args.audit_tol, setup)
        return cmd_compare_steps(config, setup)
    except CONFIG_ERRORS as e:
        cli_logger.error(f'Invalid configuration: {e}')
        print(f'[error] {e}', file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except SOLVER_ERRORS as e:
        cli_logger.exception(f'Solver failed: {e}')
        print(f'[error] {e}', file=sys.stderr)
        return EXIT_SOLVER_ERROR


if __name__ == '__main__':
    sys.exit(main())
