import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import polars as pl

from projsplit.block_updates import (
    BlockOperators,
    BlockState,
    OneStepParams,
    one_forward_step,
    seed_state,
    two_forward_step,
)
from projsplit.operators.base import ForwardOperator, Resolvent
from projsplit.separator import (
    BlockPair,
    project_to_hplane,
    separator_gradient,
)
from projsplit.solver import (
    BlockScheme,
    BlockSpec,
    InitialState,
    IterationSnapshot,
    ProblemSpec,
    SolveOptions,
    solve,
)
from projsplit.spaces import GammaMetric, LinearMap, PrimalDualPoint, as_vector

reductions_logger = logging.getLogger('Reductions')


def _single_block_ops(
    resolvent: Resolvent, forward: ForwardOperator
) -> BlockOperators:
    return BlockOperators(resolvent, forward, LinearMap.identity(forward.dim))


def fb_step_equivalence(
    resolvent: Resolvent,
    forward: ForwardOperator,
    rho: float,
    x: np.ndarray,
    z: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Evaluate the one-forward-step map at alpha = 0 and the plain
    forward-backward step from the same x.

    With alpha = 0 the primal coordinate z drops out of the map, so both
    results are the same floating-point vector J(x - rho Bx).

    Returns:
        Tuple[np.ndarray, np.ndarray]: (x from the map, x from forward-backward).
    """
    x = as_vector(x, 'x')
    z = x + 1.0 if z is None else as_vector(z, 'z')
    ops = _single_block_ops(resolvent, forward)

    bx = forward(x)
    zero = np.zeros_like(x)
    state = BlockState(x=x, y=zero, b=bx, y_hat=zero, rho=rho)
    mapped = one_forward_step(
        z, state, zero, OneStepParams(0.0, rho), ops
    ).x
    direct, _ = resolvent(x - rho * bx, rho)
    return mapped, direct


def _fb_iterates(
    resolvent: Resolvent,
    forward: ForwardOperator,
    rho: float,
    start: np.ndarray,
    iterations: int,
) -> List[np.ndarray]:
    iterates = []
    x = start
    for _ in range(iterations + 1):
        x, _ = resolvent(x - rho * forward(x), rho)
        iterates.append(x)
    return iterates


def _alpha_zero_iterates(
    resolvent: Resolvent,
    forward: ForwardOperator,
    rho: float,
    start: np.ndarray,
    iterations: int,
) -> List[np.ndarray]:
    ops = _single_block_ops(resolvent, forward)
    state = seed_state(start, ops, rho)
    iterates = [state.x]
    params = OneStepParams(0.0, rho)
    zero = np.zeros_like(start)
    for _ in range(iterations):
        state = one_forward_step(start, state, zero, params, ops)
        iterates.append(state.x)
    return iterates


def _solver_iterates(
    resolvent: Resolvent,
    forward: ForwardOperator,
    rho: float,
    start: np.ndarray,
    alpha: float,
    iterations: int,
) -> List[np.ndarray]:
    block = BlockSpec(
        resolvent,
        forward,
        LinearMap.identity(forward.dim),
        BlockScheme.ONE_STEP_FIXED,
        params=OneStepParams(alpha, rho),
        name='fb_limit',
    )
    iterates: List[np.ndarray] = []

    def record(snapshot: IterationSnapshot):
        iterates.append(snapshot.states[0].x)

    solve(
        ProblemSpec([block]),
        InitialState(PrimalDualPoint(start), [start]),
        SolveOptions(
            max_iters=iterations, stop_on_residual=False, callback=record
        ),
    )
    return iterates


def fb_limit_check(
    resolvent: Resolvent,
    forward: ForwardOperator,
    rho: float,
    z0: np.ndarray,
    alpha_seq: Sequence[float],
    iterations: int = 50,
) -> pl.DataFrame:
    """Distance between single-block projective splitting and forward-backward.

    For each alpha the n = 1 solver runs `iterations` iterations from z0
    (with x0 = z0) and its block iterates x^k are compared with the
    forward-backward iterates started from z0, aligned so that both
    sequences begin with J(z0 - rho Bz0). alpha = 0 runs the map directly.
    A solve that stops early is padded with its last iterate.

    Returns:
        pl.DataFrame: Columns `alpha` and `gap`, the largest distance over
            the run.
    """
    start = as_vector(z0, 'z0')
    reference = _fb_iterates(resolvent, forward, rho, start, iterations)

    gaps = []
    for alpha in alpha_seq:
        if alpha == 0:
            iterates = _alpha_zero_iterates(
                resolvent, forward, rho, start, iterations
            )
        else:
            iterates = [reference[0]] + _solver_iterates(
                resolvent, forward, rho, start, alpha, iterations
            )
        iterates += [iterates[-1]] * (len(reference) - len(iterates))
        gap = max(
            float(np.linalg.norm(a - b)) for a, b in zip(iterates, reference)
        )
        reductions_logger.debug(f'alpha={alpha}: gap {gap:.3e}.')
        gaps.append(gap)

    return pl.DataFrame(
        {'alpha': [float(a) for a in alpha_seq], 'gap': gaps},
        schema={'alpha': pl.Float64, 'gap': pl.Float64},
    )


@dataclass(frozen=True)
class TsengStepReport:
    """One projective step with a two-forward-step pair, in both forms.

    Attributes:
        rho_tilde (float): rho(1 + <Bz - Bx, y>/||y||^2); nan when terminal.
        z_plus_projective (np.ndarray): z+ from the halfspace projection.
        z_plus_tseng_form (np.ndarray): (1 - rho_tilde/rho)z
            + (rho_tilde/rho)x - rho_tilde(Bx - Bz).
        discrepancy (float): Norm of their difference.
        resolvent_evaluations (int): Resolvent calls the step made.
        terminal (bool): Whether y = 0, so x already solves the inclusion.
    """

    rho_tilde: float
    z_plus_projective: np.ndarray
    z_plus_tseng_form: np.ndarray
    discrepancy: float
    resolvent_evaluations: int
    terminal: bool = False


def tseng_equivalence_step(
    resolvent: Resolvent,
    forward: ForwardOperator,
    rho: float,
    gamma: float,
    z: np.ndarray,
) -> TsengStepReport:
    """Compare one n = 1 projective step with Tseng's closed form.

    x = J(z - rho Bz) and y = (z - rho Bz - x)/rho + Bx come from the
    two-forward-step update with w = 0; z+ is then computed by projecting
    onto the separating halfspace and by the closed form.
    """
    z = as_vector(z, 'z')
    ops = _single_block_ops(resolvent, forward)
    metric = GammaMetric(gamma)

    calls_before = resolvent.evaluations
    state = two_forward_step(z, np.zeros_like(z), rho, ops)
    calls = resolvent.evaluations - calls_before

    hyperplane = separator_gradient(
        [BlockPair(state.x, state.y)], [ops.linear_map], metric
    )
    outcome = project_to_hplane(PrimalDualPoint(z), hyperplane, metric)
    projected = outcome.next_point.z

    y_norm_sq = float(state.y @ state.y)
    if outcome.terminal or y_norm_sq == 0:
        reductions_logger.info('Tseng step hit y = 0; x solves the inclusion.')
        return TsengStepReport(
            rho_tilde=float('nan'),
            z_plus_projective=projected,
            z_plus_tseng_form=state.x,
            discrepancy=float(np.linalg.norm(projected - state.x)),
            resolvent_evaluations=calls,
            terminal=True,
        )

    bz = forward(z)
    forward_gap = bz - state.b
    rho_tilde = rho * (1.0 + float(forward_gap @ state.y) / y_norm_sq)
    ratio = rho_tilde / rho
    closed_form = (
        (1.0 - ratio) * z + ratio * state.x - rho_tilde * (state.b - bz)
    )
    return TsengStepReport(
        rho_tilde=rho_tilde,
        z_plus_projective=projected,
        z_plus_tseng_form=closed_form,
        discrepancy=float(np.linalg.norm(projected - closed_form)),
        resolvent_evaluations=calls,
    )
