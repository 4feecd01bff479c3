import itertools
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from kami_logging import benchmark_with

from projsplit.block_updates import BacktrackConfig, TrialRule
from projsplit.constants import (
    BACKTRACK_DELTA,
    DEFAULT_BETA,
    PORTFOLIO_ENUMERATION_MAX_DIM,
    PORTFOLIO_GAMMA,
)
from projsplit.operators.base import ForwardOperator
from projsplit.operators.forward import GradKind, GradSpec, forward_from_grad
from projsplit.operators.prox import ProxKind, ProxSpec, resolvent_from_prox
from projsplit.problems.base import (
    ExperimentSetup,
    ProblemConfigError,
    ReferenceSolution,
    ReferenceSolveError,
    build_block,
)
from projsplit.problems.reference import certify, reference_solve
from projsplit.solver import (
    BlockScheme,
    InitialState,
    ProblemSpec,
    SolveOptions,
    solve,
)
from projsplit.spaces import GammaMetric, LinearMap, PrimalDualPoint

portfolio_logger = logging.getLogger('Portfolio Problem')

# relative tolerance on sign and feasibility tests of the KKT candidates
_KKT_FEASIBILITY_TOL = 1e-10
_POLISH_SUPPORT_TOL = 1e-7
_POLISH_MAX_ITERS = 20000


@dataclass(frozen=True)
class PortfolioInstance:
    """min x'Qx over the simplex subject to m'x >= r."""

    Q: np.ndarray
    m: np.ndarray
    r: float
    delta_r: float
    seed: Optional[int] = None

    @property
    def dim(self) -> int:
        return self.m.shape[0]


def portfolio_objective(x: np.ndarray, instance: PortfolioInstance) -> float:
    return float(x @ (instance.Q @ x))


def portfolio_criterion(
    x: np.ndarray,
    instance: PortfolioInstance,
    F_star: float,
    literal: bool = False,
) -> float:
    """Combined optimality and feasibility measure c(x).

    c(x) = max{(F(x) - F*)/F*, 0} - min{m'x - r, 0} + |sum(x) - 1| + n(x)

    where n(x) = -min{0, min_i x_i} penalizes negative entries. With
    `literal=True` the last term is -max{0, min_i x_i} instead, which
    penalizes strictly positive iterates.

    Raises:
        ProblemConfigError: If F_star is not positive.
    """
    if not F_star > 0:
        raise ProblemConfigError(f'F_star must be positive, got {F_star}.')

    x = np.asarray(x, dtype=np.float64)
    gap = max((portfolio_objective(x, instance) - F_star) / F_star, 0.0)
    shortfall = -min(float(instance.m @ x) - instance.r, 0.0)
    budget = abs(float(np.sum(x)) - 1.0)
    smallest = float(np.min(x))
    if literal:
        sign_term = -max(0.0, smallest)
    else:
        sign_term = -min(0.0, smallest)
    return gap + shortfall + budget + sign_term


def portfolio_setup(
    instance: PortfolioInstance,
    gamma: Optional[float] = None,
    scheme: BlockScheme = BlockScheme.ONE_STEP_BACKTRACK,
    alpha: float = 0.1,
    rho: Optional[float] = None,
    beta: float = DEFAULT_BETA,
    delta: float = BACKTRACK_DELTA,
    rho_hat: float = float('inf'),
    trial_rule: TrialRule = TrialRule.PREVIOUS,
) -> ExperimentSetup:
    """Two-block splitting 0 in N_C1 z + 2Qz + N_C2 z.

    Block 1 holds the simplex C1 and the gradient 2Qx, block 2 the
    halfspace C2 = {x : m'x >= r} with a zero forward map, alpha = 1 and
    the stepsize of block 1. Both start from x0 = 1/d with
    theta_hat = x0 and w_hat = 2Qx0 for a backtracking block 1.
    """
    d = instance.dim
    scheme = BlockScheme(scheme)
    if gamma is None:
        gamma = PORTFOLIO_GAMMA.get(instance.delta_r, 1.0)

    x0 = np.full(d, 1.0 / d)
    forward = forward_from_grad(GradSpec(GradKind.QUADRATIC, instance.Q))
    w_hat = forward.func(x0)

    backtrack = None
    if scheme in (
        BlockScheme.ONE_STEP_BACKTRACK,
        BlockScheme.TWO_STEP_BACKTRACK,
    ):
        backtrack = BacktrackConfig(
            delta=delta,
            rho_hat=rho_hat,
            rho0=1.0 if rho is None else rho,
            theta_hat=x0,
            w_hat=w_hat,
            trial_rule=trial_rule,
        )

    assets = build_block(
        resolvent_from_prox(ProxSpec(ProxKind.SIMPLEX), d),
        forward,
        LinearMap.identity(d),
        scheme,
        alpha=alpha,
        rho=rho,
        backtrack=backtrack,
        name='simplex',
    )
    target = build_block(
        resolvent_from_prox(
            ProxSpec(ProxKind.HALFSPACE, normal=instance.m, offset=instance.r),
            d,
        ),
        ForwardOperator.zero(d),
        LinearMap.identity(d),
        BlockScheme.ONE_STEP_FIXED,
        alpha=1.0,
        rho=1.0,
        rho_link=0,
        name='return',
    )

    problem = ProblemSpec([assets, target], GammaMetric(gamma), beta)
    initial = InitialState(
        PrimalDualPoint(x0, (np.zeros(d),)),
        x0=[x0, x0],
        y0=[w_hat, None],
    )
    return ExperimentSetup(instance, problem, initial)


@benchmark_with(portfolio_logger)
def gen_portfolio(
    d: int,
    delta_r: float,
    seed: Optional[int] = None,
    **setup_options,
) -> ExperimentSetup:
    """Random Markowitz instance.

    Q = Q0 Q0'/d with standard normal Q0, m uniform on [0, 100] and
    r = delta_r * sum(m)/d.

    Args:
        d (int): Number of assets, at least 2.
        delta_r (float): Return level relative to the mean return.
        seed (Optional[int]): Random seed.
        **setup_options: Forwarded to `portfolio_setup` (gamma, scheme, alpha, ...).

    Returns:
        ExperimentSetup: The instance, its two-block problem and starting point.

    Raises:
        ProblemConfigError: If d < 2, delta_r <= 0 or no asset beats r.
    """
    if d < 2:
        raise ProblemConfigError(f'Portfolio needs d >= 2, got {d}.')
    if not delta_r > 0:
        raise ProblemConfigError(f'delta_r must be positive, got {delta_r}.')

    rng = np.random.default_rng(seed)
    Q0 = rng.standard_normal((d, d))
    Q = Q0 @ Q0.T / d
    Q = 0.5 * (Q + Q.T)
    m = rng.uniform(0.0, 100.0, size=d)
    r = delta_r * float(np.sum(m)) / d

    if not np.max(m) > r:
        raise ProblemConfigError(
            f'No asset reaches r={r:.4f}; the feasible set has empty interior.'
        )

    portfolio_logger.info(
        f'Generated portfolio instance d={d}, delta_r={delta_r}, r={r:.4f}.'
    )
    instance = PortfolioInstance(Q, m, r, delta_r, seed)
    return portfolio_setup(instance, **setup_options)


@dataclass(frozen=True)
class _KKTCandidate:
    x: np.ndarray
    nu: float
    mu: float
    residual: float


def _solve_support(
    instance: PortfolioInstance, support: Sequence[int], active: bool
) -> Optional[_KKTCandidate]:
    """Solve the KKT system with x zero off `support`.

    Stationarity 2Qx + nu*1 - mu*m - s = 0 with s = 0 on the support; the
    return constraint is an equality when `active`, otherwise mu = 0.
    """
    support = np.asarray(support, dtype=np.intp)
    k = support.shape[0]
    Q_ss = instance.Q[np.ix_(support, support)]
    m_s = instance.m[support]

    size = k + 1 + int(active)
    system = np.zeros((size, size))
    rhs = np.zeros(size)
    system[:k, :k] = 2 * Q_ss
    system[:k, k] = 1.0
    system[k, :k] = 1.0
    rhs[k] = 1.0
    if active:
        system[:k, k + 1] = -m_s
        system[k + 1, :k] = m_s
        rhs[k + 1] = instance.r

    try:
        solution = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.allclose(system @ solution, rhs, rtol=1e-9, atol=1e-9):
        return None

    x = np.zeros(instance.dim)
    x[support] = solution[:k]
    nu = float(solution[k])
    mu = float(solution[k + 1]) if active else 0.0
    return _KKTCandidate(x, nu, mu, _kkt_residual(instance, x, nu, mu))


def _kkt_residual(
    instance: PortfolioInstance, x: np.ndarray, nu: float, mu: float
) -> float:
    """Largest violation among the KKT conditions at (x, nu, mu)."""
    slack = 2 * instance.Q @ x + nu - mu * instance.m
    on_support = x > 0
    scale = max(1.0, float(np.max(np.abs(instance.m))))
    violations = [
        float(np.max(np.abs(slack[on_support]), initial=0.0)),
        float(np.max(-slack[~on_support], initial=0.0)),
        max(0.0, -float(np.min(x))),
        abs(float(np.sum(x)) - 1.0),
        max(0.0, instance.r - float(instance.m @ x)) / scale,
        max(0.0, -mu),
        abs(mu * (float(instance.m @ x) - instance.r)) / scale,
    ]
    return max(violations)


def _is_feasible(candidate: _KKTCandidate) -> bool:
    return candidate.residual <= _KKT_FEASIBILITY_TOL * max(
        1.0, float(np.max(np.abs(candidate.x)))
    )


def _reference_solution(
    instance: PortfolioInstance, candidate: _KKTCandidate, method: str
) -> ReferenceSolution:
    return certify(
        ReferenceSolution(
            x=candidate.x,
            objective=portfolio_objective(candidate.x, instance),
            method=method,
            kkt_residual=candidate.residual,
            duals=(candidate.mu * instance.m,),
        )
    )


def enumerate_portfolio(instance: PortfolioInstance) -> ReferenceSolution:
    """Exact solution by enumerating supports and return-constraint activity.

    Raises:
        ReferenceSolveError: If d exceeds PORTFOLIO_ENUMERATION_MAX_DIM or
            no candidate satisfies the KKT conditions.
    """
    d = instance.dim
    if d > PORTFOLIO_ENUMERATION_MAX_DIM:
        raise ReferenceSolveError(
            f'Enumeration is limited to d <= {PORTFOLIO_ENUMERATION_MAX_DIM}, got {d}.'
        )

    best: Optional[_KKTCandidate] = None
    best_value = float('inf')
    for size in range(1, d + 1):
        for support in itertools.combinations(range(d), size):
            for active in (False, True):
                candidate = _solve_support(instance, support, active)
                if candidate is None or not _is_feasible(candidate):
                    continue
                value = portfolio_objective(candidate.x, instance)
                if value < best_value:
                    best, best_value = candidate, value

    if best is None:
        raise ReferenceSolveError('No support satisfies the KKT conditions.')
    return _reference_solution(instance, best, 'kkt_enumeration')


def polish_portfolio(instance: PortfolioInstance) -> ReferenceSolution:
    """Long projective splitting run followed by a KKT solve on its support.

    Raises:
        ReferenceSolveError: If neither activity of the return constraint
            gives a KKT point on the detected support.
    """
    setup = portfolio_setup(instance)
    result = solve(
        setup.problem,
        setup.initial,
        SolveOptions(max_iters=_POLISH_MAX_ITERS, residual_tol=1e-10),
    )
    x = result.z
    support = np.flatnonzero(x > _POLISH_SUPPORT_TOL * max(1.0, float(np.max(x))))
    near_active = abs(float(instance.m @ x) - instance.r) <= 1e-6 * max(
        1.0, instance.r
    )

    for active in (near_active, not near_active):
        candidate = _solve_support(instance, support, active)
        if candidate is not None and _is_feasible(candidate):
            return _reference_solution(instance, candidate, 'kkt_polish')

    portfolio_logger.error(
        f'Polish failed on support of size {support.shape[0]} after {result.iterations} iterations.'
    )
    raise ReferenceSolveError('Polishing did not produce a KKT point.')


@reference_solve.register
def _(instance: PortfolioInstance) -> ReferenceSolution:
    if instance.dim <= PORTFOLIO_ENUMERATION_MAX_DIM:
        return enumerate_portfolio(instance)
    return polish_portfolio(instance)
