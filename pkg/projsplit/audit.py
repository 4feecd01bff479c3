import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import polars as pl

from projsplit.block_updates import ascent_check, contractive_check
from projsplit.separator import BlockPair, block_separator_terms
from projsplit.solver import (
    BlockScheme,
    InitialState,
    IterationSnapshot,
    ProblemSpec,
    ProjectiveSplittingSolver,
    SolveOptions,
    SolveResult,
    SolveStatus,
    kkt_check,
)
from projsplit.spaces import PrimalDualPoint, gamma_distance_sq

audit_logger = logging.getLogger('Invariant Audit')

DEFAULT_AUDIT_TOL = 1e-8
# L of generated problems comes from power iteration
STEPSIZE_FLOOR_TOL = 1e-6


@dataclass
class PropertyTally:
    """Worst slack seen for one property; negative slack beyond tol*scale is a violation."""

    name: str
    tol: float
    worst_slack: float = float('inf')
    checks: int = 0
    violations: int = 0

    def record(self, slack: float, scale: float = 1.0):
        self.checks += 1
        self.worst_slack = min(self.worst_slack, slack)
        if slack < -self.tol * max(1.0, scale):
            self.violations += 1

    @property
    def passed(self) -> bool:
        return self.violations == 0


@dataclass
class AuditReport:
    tallies: Dict[str, PropertyTally] = field(default_factory=dict)
    kkt_residual: Optional[float] = None

    @property
    def passed(self) -> bool:
        return all(tally.passed for tally in self.tallies.values())

    def to_frame(self) -> pl.DataFrame:
        tallies = list(self.tallies.values())
        return pl.DataFrame(
            {
                'property': [t.name for t in tallies],
                'worst_slack': [t.worst_slack for t in tallies],
                'checks': [t.checks for t in tallies],
                'violations': [t.violations for t in tallies],
                'passed': [t.passed for t in tallies],
            },
            schema={
                'property': pl.Utf8,
                'worst_slack': pl.Float64,
                'checks': pl.Int64,
                'violations': pl.Int64,
                'passed': pl.Boolean,
            },
        )


class InvariantAuditor:
    """Iteration callback checking the per-iteration guarantees of the method.

    Per block: the ascent inequality for one-forward-step blocks, the
    contractive bound and the stepsize lower bound for backtracking
    one-step blocks, and phi_i(p) >= 0 for two-forward-step blocks. With a
    reference point p* of the extended solution set: phi(p*) <= 0 and
    Fejer monotonicity of ||p - p*||_gamma.

    Attributes:
        solver (ProjectiveSplittingSolver): The solver being audited; its
            backtracking certificates are read once seeding is done.
        reference (Optional[PrimalDualPoint]): p*, when known.
        tol (float): Relative tolerance on every slack.
    """

    def __init__(
        self,
        solver: ProjectiveSplittingSolver,
        reference: Optional[PrimalDualPoint] = None,
        tol: float = DEFAULT_AUDIT_TOL,
    ):
        self.solver = solver
        self.problem: ProblemSpec = solver.problem
        self.reference = reference
        self.tol = tol
        self.report = AuditReport()

    def _tally(self, name: str, tol: Optional[float] = None) -> PropertyTally:
        if name not in self.report.tallies:
            self.report.tallies[name] = PropertyTally(
                name, self.tol if tol is None else tol
            )
        return self.report.tallies[name]

    def __call__(self, snapshot: IterationSnapshot):
        maps = self.problem.maps
        duals = snapshot.point.duals(maps)
        pairs = [BlockPair(state.x, state.y) for state in snapshot.states]
        phi_terms = block_separator_terms(snapshot.point, pairs, maps)

        for index, block in enumerate(self.problem.blocks):
            label = f'block_{index + 1}'
            gz = block.linear_map.apply(snapshot.point.z)
            w = duals[index]
            old = snapshot.states_before[index]
            new = snapshot.states[index]

            if block.scheme in (
                BlockScheme.ONE_STEP_FIXED,
                BlockScheme.ONE_STEP_BACKTRACK,
            ):
                alpha = (
                    block.params.alpha
                    if block.scheme == BlockScheme.ONE_STEP_FIXED
                    else block.alpha
                )
                prev_phi = float((gz - old.x) @ (old.y - w))
                ascent = ascent_check(
                    prev_phi, old, new, gz, w, alpha, new.rho, tol=0.0
                )
                self._tally(f'ascent_{label}').record(
                    ascent.slack, max(ascent.scale, abs(prev_phi))
                )

            if block.scheme == BlockScheme.ONE_STEP_BACKTRACK:
                cfg = self.solver.backtrack_configs[index]
                contractive = contractive_check(
                    new,
                    old,
                    gz,
                    w,
                    block.alpha,
                    new.rho,
                    cfg.theta_hat,
                    cfg.w_hat,
                    tol=0.0,
                )
                self._tally(f'contractive_{label}').record(
                    contractive.slack, contractive.scale
                )

                lipschitz = block.forward.lipschitz
                if lipschitz:
                    bound = min(
                        cfg.rho0,
                        2 * cfg.delta * (1 - block.alpha) / lipschitz,
                    )
                    floor_tol = max(self.tol, STEPSIZE_FLOOR_TOL)
                    self._tally(f'stepsize_floor_{label}', floor_tol).record(
                        new.rho - bound, bound
                    )

            if block.scheme in (
                BlockScheme.TWO_STEP,
                BlockScheme.TWO_STEP_BACKTRACK,
            ):
                scale = float(
                    np.linalg.norm(gz - new.x) * np.linalg.norm(new.y - w)
                )
                self._tally(f'phi_nonneg_{label}').record(
                    phi_terms[index], scale
                )

        if self.reference is not None:
            self._check_reference(snapshot, pairs)

    def _check_reference(
        self, snapshot: IterationSnapshot, pairs: List[BlockPair]
    ):
        maps = self.problem.maps
        metric = self.problem.metric
        terms = block_separator_terms(self.reference, pairs, maps)
        self._tally('separator_at_solution').record(
            -float(np.sum(terms)), float(np.sum(np.abs(terms)))
        )

        before = gamma_distance_sq(snapshot.point, self.reference, metric)
        after = gamma_distance_sq(
            snapshot.next_point, self.reference, metric
        )
        self._tally('fejer').record(before - after)


def audit_solve(
    problem: ProblemSpec,
    initial: InitialState,
    options: Optional[SolveOptions] = None,
    reference: Optional[PrimalDualPoint] = None,
    tol: float = DEFAULT_AUDIT_TOL,
    kkt_tol: float = 1e-6,
) -> Tuple[SolveResult, AuditReport]:
    """Solve while auditing every iteration, then run the KKT check.

    A run that stopped before the iteration limit must also leave a KKT
    residual of at most `kkt_tol`; it is reported as the `kkt` property.
    """
    options = options or SolveOptions()
    solver = ProjectiveSplittingSolver(problem, options)
    auditor = InvariantAuditor(solver, reference, tol)
    solver.options.callback = auditor

    result = solver.run(initial)
    report = auditor.report
    report.kkt_residual = max(
        kkt_check(result, problem, kkt_tol).block_residuals
    )
    if result.status != SolveStatus.MAX_ITERS:
        report.tallies['kkt'] = PropertyTally('kkt', 0.0)
        report.tallies['kkt'].record(kkt_tol - report.kkt_residual)

    if not report.passed:
        audit_logger.warning(
            f'Audit found violations: '
            f'{[t.name for t in report.tallies.values() if not t.passed]}'
        )
    return result, report
