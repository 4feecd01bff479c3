from dataclasses import dataclass, field
from typing import Any, Optional, Tuple

import numpy as np

from projsplit.block_updates import BacktrackConfig, OneStepParams
from projsplit.operators.base import ForwardOperator, Resolvent
from projsplit.solver import BlockScheme, BlockSpec, InitialState, ProblemSpec
from projsplit.spaces import LinearMap, PrimalDualPoint


class ProblemConfigError(Exception):
    """Exception raised when a problem generator receives invalid parameters."""

    pass


class ReferenceSolveError(Exception):
    """Exception raised when a reference solution can not be computed or certified."""

    pass


@dataclass
class ExperimentSetup:
    """A generated instance with its block splitting and starting point."""

    instance: Any
    problem: ProblemSpec
    initial: InitialState


@dataclass(frozen=True)
class ReferenceSolution:
    """High-accuracy solution of an instance.

    Attributes:
        x (np.ndarray): Primal solution.
        objective (float): Objective value F* at x.
        method (str): Oracle that produced it.
        kkt_residual (float): Optimality residual certified by the oracle.
        duals (Tuple[np.ndarray, ...]): w_1..w_{n-1} of a point of the
            extended solution set for the generator's splitting, when known.
    """

    x: np.ndarray
    objective: float
    method: str
    kkt_residual: float
    duals: Tuple[np.ndarray, ...] = field(default=())

    def as_point(self) -> PrimalDualPoint:
        return PrimalDualPoint(self.x, self.duals)


def relative_error(value: float, reference: float) -> float:
    """(value - reference) / |reference|, the plain difference when reference is 0."""
    if reference == 0:
        return value
    return (value - reference) / abs(reference)


def build_block(
    resolvent: Resolvent,
    forward: ForwardOperator,
    linear_map: LinearMap,
    scheme: BlockScheme,
    alpha: float = 0.5,
    rho: Optional[float] = None,
    backtrack: Optional[BacktrackConfig] = None,
    rho_link: Optional[int] = None,
    name: str = '',
) -> BlockSpec:
    """Assemble a BlockSpec, filling the stepsize the scheme needs.

    Without an explicit rho, fixed one-step blocks use (1 - alpha)/L (half
    the largest valid stepsize), two-step blocks 0.9/L, and backtracking
    blocks start from rho0 = 1. Constant forward maps default to rho = 1.
    """
    scheme = BlockScheme(scheme)
    lipschitz = forward.lipschitz or 0.0

    if scheme == BlockScheme.ONE_STEP_FIXED:
        if rho is None:
            rho = (1 - alpha) / lipschitz if lipschitz > 0 else 1.0
        return BlockSpec(
            resolvent,
            forward,
            linear_map,
            scheme,
            params=OneStepParams(alpha, rho),
            rho_link=rho_link,
            name=name,
        )

    if scheme == BlockScheme.TWO_STEP:
        if rho is None:
            rho = 0.9 / lipschitz if lipschitz > 0 else 1.0
        return BlockSpec(
            resolvent, forward, linear_map, scheme, rho=rho, name=name
        )

    if backtrack is None:
        backtrack = BacktrackConfig(rho0=1.0 if rho is None else rho)
    return BlockSpec(
        resolvent,
        forward,
        linear_map,
        scheme,
        alpha=alpha if scheme == BlockScheme.ONE_STEP_BACKTRACK else None,
        backtrack=backtrack,
        name=name,
    )
