import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import polars as pl
from kami_logging import benchmark_with

from projsplit.block_updates import (
    BacktrackConfig,
    BlockConfigError,
    BlockOperators,
    BlockState,
    OneStepParams,
    backtrack,
    one_forward_step,
    seed_state,
    two_forward_step,
    two_step_backtrack,
    validate_lipschitz_step,
)
from projsplit.constants import (
    DEFAULT_BETA,
    DEFAULT_MAX_ITERS,
    DEFAULT_PI_TOL,
    DEFAULT_RESIDUAL_TOL,
    TRACE_COLUMNS,
)
from projsplit.operators.base import ForwardOperator, Resolvent
from projsplit.separator import (
    BlockPair,
    HyperplaneData,
    ProjectionOutcome,
    project_to_hplane,
    separator_gradient,
)
from projsplit.spaces import (
    DimensionMismatchError,
    GammaMetric,
    LinearMap,
    NonFiniteValueError,
    PrimalDualPoint,
    as_vector,
)

solver_logger = logging.getLogger('Projective Splitting Solver')


class SolverError(Exception):
    """Exception raised when a solve can not proceed."""

    pass


class ProblemSpecError(Exception):
    """Exception raised when a problem specification is structurally invalid."""

    pass


class BlockScheme(str, Enum):
    ONE_STEP_FIXED = 'one_step_fixed'
    ONE_STEP_BACKTRACK = 'one_step_backtrack'
    TWO_STEP = 'two_step_lipschitz'
    TWO_STEP_BACKTRACK = 'two_step_backtrack'


ONE_STEP_SCHEMES = (BlockScheme.ONE_STEP_FIXED, BlockScheme.ONE_STEP_BACKTRACK)
BACKTRACK_SCHEMES = (
    BlockScheme.ONE_STEP_BACKTRACK,
    BlockScheme.TWO_STEP_BACKTRACK,
)


@dataclass
class BlockSpec:
    """One block (A_i, B_i, G_i) together with its update scheme.

    Attributes:
        resolvent (Resolvent): Backward step of A_i.
        forward (ForwardOperator): Forward map B_i.
        linear_map (LinearMap): G_i; the identity for the last block.
        scheme (BlockScheme): How pairs are generated for this block.
        params (Optional[OneStepParams]): alpha and rho of a fixed one-step block.
        alpha (Optional[float]): alpha of a one-step backtracking block.
        backtrack (Optional[BacktrackConfig]): Linesearch parameters.
        rho (Optional[float]): Stepsize of a two-step block.
        rho_schedule (Optional[Callable[[int], float]]): Per-iteration
            stepsize of a two-step block, called with k >= 1.
        rho_link (Optional[int]): Index of an earlier block whose stepsize
            of the current iteration this block reuses.
        name (str): Label used in logs.
    """

    resolvent: Resolvent
    forward: ForwardOperator
    linear_map: LinearMap
    scheme: BlockScheme = BlockScheme.ONE_STEP_BACKTRACK
    params: Optional[OneStepParams] = None
    alpha: Optional[float] = None
    backtrack: Optional[BacktrackConfig] = None
    rho: Optional[float] = None
    rho_schedule: Optional[Callable[[int], float]] = None
    rho_link: Optional[int] = None
    name: str = ''

    def __post_init__(self):
        self.scheme = BlockScheme(self.scheme)

    @property
    def ops(self) -> BlockOperators:
        return BlockOperators(self.resolvent, self.forward, self.linear_map)

    @property
    def dim(self) -> int:
        return self.linear_map.codomain_dim

    def stepsize_at(self, iteration: int) -> float:
        """Stepsize of a fixed or scheduled block at iteration `iteration`."""
        if self.scheme == BlockScheme.ONE_STEP_FIXED:
            return self.params.rho
        if self.scheme == BlockScheme.TWO_STEP:
            if self.rho_schedule is not None:
                return float(self.rho_schedule(iteration))
            return self.rho
        return self.backtrack.rho0


@dataclass
class ProblemSpec:
    blocks: List[BlockSpec]
    metric: GammaMetric = field(default_factory=GammaMetric)
    beta: float = DEFAULT_BETA

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def maps(self) -> List[LinearMap]:
        return [block.linear_map for block in self.blocks]

    @property
    def primal_dim(self) -> int:
        return self.blocks[-1].linear_map.domain_dim


@dataclass
class InitialState:
    """Starting point p0 and per-block x0 (and optional y0 in (A + B)x0)."""

    point: PrimalDualPoint
    x0: List[np.ndarray]
    y0: Optional[List[Optional[np.ndarray]]] = None

    @classmethod
    def zeros(cls, problem: ProblemSpec) -> 'InitialState':
        return cls(
            point=PrimalDualPoint(
                np.zeros(problem.primal_dim),
                tuple(np.zeros(block.dim) for block in problem.blocks[:-1]),
            ),
            x0=[np.zeros(block.dim) for block in problem.blocks],
        )


@dataclass(frozen=True)
class IterationSnapshot:
    """Everything one iteration saw and produced, passed to the callback."""

    iteration: int
    point: PrimalDualPoint
    next_point: PrimalDualPoint
    states_before: List[BlockState]
    states: List[BlockState]
    hyperplane: HyperplaneData
    outcome: ProjectionOutcome


@dataclass
class SolveOptions:
    max_iters: int = DEFAULT_MAX_ITERS
    pi_tol: float = DEFAULT_PI_TOL
    residual_tol: float = DEFAULT_RESIDUAL_TOL
    stop_on_residual: bool = True
    objective: Optional[Callable[[np.ndarray], float]] = None
    trace_every: int = 1
    callback: Optional[Callable[[IterationSnapshot], None]] = None
    block_order: Optional[Sequence[int]] = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise SolverError('max_iters must be at least 1.')
        if not self.pi_tol > 0 or not self.residual_tol > 0:
            raise SolverError('Tolerances must be positive.')
        if self.trace_every < 1:
            raise SolverError('trace_every must be at least 1.')


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    phi: float
    pi: float
    tau: float
    res_primal: float
    res_dual: float
    objective: Optional[float]
    forward_evals: int
    elapsed_s: float
    rhos: List[float]
    etas: List[float]


@dataclass
class SolveTrace:
    n_blocks: int
    records: List[IterationRecord] = field(default_factory=list)

    def append(self, record: IterationRecord):
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return self.to_frame()[name].to_numpy()

    def to_frame(self) -> pl.DataFrame:
        """Trace as a DataFrame with the base columns then rho_i and eta_i."""
        data: Dict[str, list] = {
            'iter': [r.iteration for r in self.records],
            'phi': [r.phi for r in self.records],
            'pi': [r.pi for r in self.records],
            'tau': [r.tau for r in self.records],
            'res_primal': [r.res_primal for r in self.records],
            'res_dual': [r.res_dual for r in self.records],
            'obj': [r.objective for r in self.records],
            'fwd_evals': [r.forward_evals for r in self.records],
            'elapsed_s': [r.elapsed_s for r in self.records],
        }
        for i in range(self.n_blocks):
            data[f'rho_{i + 1}'] = [r.rhos[i] for r in self.records]
        for i in range(self.n_blocks):
            data[f'eta_{i + 1}'] = [r.etas[i] for r in self.records]

        schema = {name: pl.Float64 for name in data}
        schema['iter'] = pl.Int64
        schema['fwd_evals'] = pl.Int64
        return pl.DataFrame(data, schema=schema).select(
            TRACE_COLUMNS
            + [f'rho_{i + 1}' for i in range(self.n_blocks)]
            + [f'eta_{i + 1}' for i in range(self.n_blocks)]
        )


class SolveStatus(str, Enum):
    CONVERGED_RESIDUAL = 'converged_residual'
    TERMINAL_PI_ZERO = 'terminal_pi_zero'
    MAX_ITERS = 'max_iters'


@dataclass
class SolveResult:
    status: SolveStatus
    point: PrimalDualPoint
    states: List[BlockState]
    trace: SolveTrace
    iterations: int
    forward_evals: int
    residual: float
    initial_forward_evals: int = 0

    @property
    def z(self) -> np.ndarray:
        return self.point.z

    @property
    def pairs(self) -> List[BlockPair]:
        return [BlockPair(state.x, state.y) for state in self.states]


@dataclass(frozen=True)
class ResidualReport:
    primal: List[float]
    dual: List[float]

    @property
    def aggregate(self) -> float:
        return max(max(self.primal), max(self.dual))


@dataclass(frozen=True)
class KKTReport:
    passed: bool
    block_residuals: List[float]
    consistency: float
    tol: float


def residuals(
    point: PrimalDualPoint,
    block_states: Sequence[BlockState],
    maps: Sequence[LinearMap],
) -> ResidualReport:
    """Per-block ||G_i z - x_i|| and ||y_i - w_i||, w_n derived from the point.

    For a single block w_1 = 0, so the dual residual is ||y_1||.
    """
    if len(block_states) != len(maps):
        raise DimensionMismatchError(
            f'{len(block_states)} block states for {len(maps)} maps.'
        )
    duals = point.duals(maps)
    primal = [
        float(np.linalg.norm(linear_map.apply(point.z) - state.x))
        for state, linear_map in zip(block_states, maps)
    ]
    dual = [
        float(np.linalg.norm(state.y - wi))
        for state, wi in zip(block_states, duals)
    ]
    return ResidualReport(primal=primal, dual=dual)


def kkt_check(
    candidate: Union['SolveResult', PrimalDualPoint],
    problem: ProblemSpec,
    tol: float = 1e-6,
) -> KKTReport:
    """Check w_i in (A_i + B_i)G_i z for every block through the resolvent.

    The residual of block i is ||G_i z - J_{A_i}(G_i z + w_i - B_i G_i z)||,
    which vanishes exactly when w_i - B_i G_i z lies in A_i G_i z. The
    consistency term ||sum G_i^* w_i|| is reported alongside. Operator
    evaluation counters are left untouched.
    """
    point = candidate.point if isinstance(candidate, SolveResult) else candidate
    maps = problem.maps
    duals = point.duals(maps)

    block_residuals = []
    consistency = np.zeros_like(point.z)
    for block, wi in zip(problem.blocks, duals):
        gz = block.linear_map.apply(point.z)
        x, _ = block.resolvent(
            gz + wi - block.forward(gz, counted=False), 1.0, counted=False
        )
        block_residuals.append(float(np.linalg.norm(gz - x)))
        consistency = consistency + block.linear_map.apply_adjoint(wi)

    consistency_norm = float(np.linalg.norm(consistency))
    passed = max(block_residuals) <= tol and consistency_norm <= tol
    return KKTReport(
        passed=passed,
        block_residuals=block_residuals,
        consistency=consistency_norm,
        tol=tol,
    )


class ProjectiveSplittingSolver:
    """Projective splitting over n blocks with one- or two-forward-step updates.

    Attributes:
        problem (ProblemSpec): Blocks, metric and relaxation.
        options (SolveOptions): Stopping rules and trace settings.

    Methods:
        _check_blocks: Checks block count, identity last map and dimensions.
        _check_schemes: Checks the parameters each scheme needs.
        _check_initial: Checks the shapes of the starting point.
        _seed_states: Builds the initial block states and certificates.
        _update_block: Runs one block update for the current iteration.
        run: Executes the main loop.
    """

    def __init__(
        self, problem: ProblemSpec, options: Optional[SolveOptions] = None
    ):
        self.problem = problem
        self.options = options or SolveOptions()
        self._check_blocks()
        self._check_schemes()
        self.backtrack_configs: List[Optional[BacktrackConfig]] = [
            block.backtrack for block in problem.blocks
        ]

    def _check_blocks(self):
        problem = self.problem

        if problem.n_blocks < 1:
            raise ProblemSpecError('A problem needs at least one block.')

        if not problem.blocks[-1].linear_map.is_identity:
            raise ProblemSpecError('The last block must use the identity map.')

        if not 0 < problem.beta < 2:
            raise ProblemSpecError(
                f'beta must lie in (0, 2), got {problem.beta}.'
            )

        primal_dim = problem.primal_dim
        for index, block in enumerate(problem.blocks, start=1):
            if block.linear_map.domain_dim != primal_dim:
                raise ProblemSpecError(
                    f'Block {index}: map domain {block.linear_map.domain_dim} differs from primal dimension {primal_dim}.'
                )
            if block.forward.dim != block.dim:
                raise ProblemSpecError(
                    f'Block {index}: forward map acts on dimension {block.forward.dim}, block has {block.dim}.'
                )

    def _check_schemes(self):
        for index, block in enumerate(self.problem.blocks, start=1):
            scheme = block.scheme

            if scheme == BlockScheme.ONE_STEP_FIXED:
                if block.params is None:
                    raise ProblemSpecError(
                        f'Block {index}: fixed one-step scheme needs params.'
                    )
                block.params.validate_for(block.forward)

            elif scheme == BlockScheme.ONE_STEP_BACKTRACK:
                if block.backtrack is None or block.alpha is None:
                    raise ProblemSpecError(
                        f'Block {index}: backtracking needs alpha and a BacktrackConfig.'
                    )
                if not 0 < block.alpha <= 1:
                    raise BlockConfigError(
                        f'Block {index}: alpha must lie in (0, 1], got {block.alpha}.'
                    )

            elif scheme == BlockScheme.TWO_STEP:
                if block.rho is None and block.rho_schedule is None:
                    raise ProblemSpecError(
                        f'Block {index}: two-step scheme needs rho or rho_schedule.'
                    )
                if block.rho is not None:
                    validate_lipschitz_step(block.rho, block.forward)

            elif block.backtrack is None:
                raise ProblemSpecError(
                    f'Block {index}: two-step backtracking needs a BacktrackConfig.'
                )

            if block.rho_link is not None:
                self._check_link(index, block)

    def _check_link(self, index: int, block: BlockSpec):
        if not 0 <= block.rho_link < index - 1:
            raise ProblemSpecError(
                f'Block {index}: rho_link must point to an earlier block.'
            )
        if block.scheme != BlockScheme.ONE_STEP_FIXED:
            raise ProblemSpecError(
                f'Block {index}: only fixed one-step blocks can link their stepsize.'
            )
        if not block.forward.constant:
            raise ProblemSpecError(
                f'Block {index}: a linked stepsize needs a constant forward map.'
            )

    def _check_initial(self, initial: InitialState):
        problem = self.problem
        point = initial.point

        if point.n_blocks != problem.n_blocks:
            raise ProblemSpecError(
                f'Initial point has {point.n_blocks} blocks, problem has {problem.n_blocks}.'
            )
        if point.z.shape != (problem.primal_dim,):
            raise ProblemSpecError(
                f'Initial z has shape {point.z.shape}, expected ({problem.primal_dim},).'
            )
        for index, (wi, block) in enumerate(
            zip(point.w, problem.blocks), start=1
        ):
            if wi.shape != (block.dim,):
                raise ProblemSpecError(
                    f'Initial w_{index} has shape {wi.shape}, expected ({block.dim},).'
                )
        if len(initial.x0) != problem.n_blocks:
            raise ProblemSpecError(
                f'{len(initial.x0)} initial x given for {problem.n_blocks} blocks.'
            )
        if initial.y0 is not None and len(initial.y0) != problem.n_blocks:
            raise ProblemSpecError(
                f'{len(initial.y0)} initial y given for {problem.n_blocks} blocks.'
            )

    def _seed_states(self, initial: InitialState) -> List[BlockState]:
        states = []
        for index, block in enumerate(self.problem.blocks):
            x0 = as_vector(initial.x0[index], f'x0_{index + 1}')
            if x0.shape != (block.dim,):
                raise ProblemSpecError(
                    f'Initial x_{index + 1} has shape {x0.shape}, expected ({block.dim},).'
                )
            y0 = None
            if initial.y0 is not None and initial.y0[index] is not None:
                y0 = as_vector(initial.y0[index], f'y0_{index + 1}')

            state = seed_state(x0, block.ops, block.stepsize_at(1), y0)
            states.append(state)

            config = self.backtrack_configs[index]
            if block.scheme in BACKTRACK_SCHEMES and (
                config.theta_hat is None or config.w_hat is None
            ):
                self.backtrack_configs[index] = config.with_certificate(
                    state.x if config.theta_hat is None else config.theta_hat,
                    state.y if config.w_hat is None else config.w_hat,
                )
        return states

    def _update_block(
        self,
        index: int,
        iteration: int,
        z: np.ndarray,
        w: np.ndarray,
        state: BlockState,
        new_states: List[Optional[BlockState]],
    ) -> BlockState:
        block = self.problem.blocks[index]
        ops = block.ops

        if block.scheme == BlockScheme.ONE_STEP_FIXED:
            params = block.params
            if block.rho_link is not None:
                params = OneStepParams(
                    params.alpha, new_states[block.rho_link].rho
                )
            return one_forward_step(z, state, w, params, ops)

        if block.scheme == BlockScheme.ONE_STEP_BACKTRACK:
            return backtrack(
                z, state, w, self.backtrack_configs[index], block.alpha, ops
            )

        if block.scheme == BlockScheme.TWO_STEP:
            return two_forward_step(z, w, block.stepsize_at(iteration), ops)

        return two_step_backtrack(
            z, state, w, self.backtrack_configs[index], ops
        )

    def _block_order(self) -> List[int]:
        n_blocks = self.problem.n_blocks
        order = self.options.block_order
        if order is None:
            return list(range(n_blocks))

        order = list(order)
        if sorted(order) != list(range(n_blocks)):
            raise SolverError(
                f'block_order must be a permutation of 0..{n_blocks - 1}.'
            )
        for position, index in enumerate(order):
            link = self.problem.blocks[index].rho_link
            if link is not None and link not in order[:position]:
                raise SolverError(
                    f'Block {index + 1} must come after its linked block {link + 1}.'
                )
        return order

    @staticmethod
    def _check_finite(iteration: int, states: Sequence[BlockState]):
        for index, state in enumerate(states, start=1):
            if not (
                np.all(np.isfinite(state.x)) and np.all(np.isfinite(state.y))
            ):
                raise NonFiniteValueError(
                    f'Non-finite block {index} pair at iteration {iteration}.'
                )

    def run(self, initial: InitialState) -> SolveResult:
        problem = self.problem
        options = self.options
        maps = problem.maps
        order = self._block_order()

        self._check_initial(initial)
        initial_evals = sum(block.forward.evaluations for block in problem.blocks)
        states = self._seed_states(initial)
        initial_evals = (
            sum(block.forward.evaluations for block in problem.blocks)
            - initial_evals
        )

        trace = SolveTrace(problem.n_blocks)
        point = initial.point
        forward_evals = 0
        residual = float('inf')
        status = SolveStatus.MAX_ITERS
        iteration = 0
        start = time.perf_counter()

        for iteration in range(1, options.max_iters + 1):
            duals = point.duals(maps)
            new_states: List[Optional[BlockState]] = [None] * problem.n_blocks
            for index in order:
                new_states[index] = self._update_block(
                    index, iteration, point.z, duals[index], states[index], new_states
                )
            self._check_finite(iteration, new_states)
            forward_evals += sum(state.forward_evals for state in new_states)

            pairs = [BlockPair(state.x, state.y) for state in new_states]
            hyperplane = separator_gradient(pairs, maps, problem.metric)
            try:
                outcome = project_to_hplane(
                    point, hyperplane, problem.metric, problem.beta, options.pi_tol
                )
            except NonFiniteValueError as e:
                solver_logger.exception(
                    f'Projection produced non-finite values at iteration {iteration}.'
                )
                raise NonFiniteValueError(
                    f'Non-finite iterate at iteration {iteration}: {e}'
                ) from e

            report = residuals(point, new_states, maps)
            residual = report.aggregate

            if options.callback is not None:
                options.callback(
                    IterationSnapshot(
                        iteration=iteration,
                        point=point,
                        next_point=outcome.next_point,
                        states_before=states,
                        states=new_states,
                        hyperplane=hyperplane,
                        outcome=outcome,
                    )
                )

            converged = (
                options.stop_on_residual and residual < options.residual_tol
            )
            done = outcome.terminal or converged
            if done or iteration % options.trace_every == 0:
                objective = (
                    float(options.objective(outcome.next_point.z))
                    if options.objective is not None
                    else None
                )
                trace.append(
                    IterationRecord(
                        iteration=iteration,
                        phi=outcome.phi_value,
                        pi=outcome.pi,
                        tau=outcome.tau,
                        res_primal=max(report.primal),
                        res_dual=max(report.dual),
                        objective=objective,
                        forward_evals=forward_evals,
                        elapsed_s=time.perf_counter() - start,
                        rhos=[state.rho for state in new_states],
                        etas=[state.eta for state in new_states],
                    )
                )

            solver_logger.debug(
                f'iter {iteration}: phi={outcome.phi_value:.3e} '
                f'pi={outcome.pi:.3e} residual={residual:.3e}'
            )

            states = new_states
            point = outcome.next_point

            if outcome.terminal:
                status = SolveStatus.TERMINAL_PI_ZERO
                break
            if converged:
                status = SolveStatus.CONVERGED_RESIDUAL
                break

        solver_logger.info(
            f'Solve finished with status {status.value} after {iteration} iterations '
            f'({forward_evals} forward evaluations, residual {residual:.3e}).'
        )
        return SolveResult(
            status=status,
            point=point,
            states=states,
            trace=trace,
            iterations=iteration,
            forward_evals=forward_evals,
            residual=residual,
            initial_forward_evals=initial_evals,
        )


@benchmark_with(solver_logger)
def solve(
    problem: ProblemSpec,
    init: Optional[InitialState] = None,
    opts: Optional[SolveOptions] = None,
) -> SolveResult:
    """Run projective splitting on `problem` from `init`.

    Each iteration updates every block by its scheme, builds the separator
    from the new pairs and projects the current point onto its halfspace.
    Stops when pi reaches `pi_tol` (the pairs then form a solution), when the
    aggregate residual drops below `residual_tol`, or after `max_iters`.

    Args:
        problem (ProblemSpec): The problem to solve.
        init (Optional[InitialState]): Starting point; zeros when omitted.
        opts (Optional[SolveOptions]): Stopping rules and trace settings.

    Returns:
        SolveResult: Final point, block states, trace and status.

    Raises:
        ProblemSpecError: On an invalid problem or starting point.
        BlockConfigError: On invalid block stepsize parameters.
        BacktrackingError: If a linesearch exceeds its trial cap.
        NonFiniteValueError: If an iterate stops being finite.
    """
    solver = ProjectiveSplittingSolver(problem, opts)
    return solver.run(init or InitialState.zeros(problem))
