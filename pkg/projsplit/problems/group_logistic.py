import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from kami_logging import benchmark_with

from projsplit.block_updates import BacktrackConfig, TrialRule
from projsplit.constants import (
    BACKTRACK_DELTA,
    BACKTRACK_GROWTH,
    DEFAULT_BETA,
    GROUP_LOGISTIC_GAMMA,
)
from projsplit.operators.base import ForwardOperator, OperatorConfigError
from projsplit.operators.forward import (
    GradKind,
    GradSpec,
    forward_from_grad,
    logistic_loss,
)
from projsplit.operators.prox import (
    ProxKind,
    ProxSpec,
    prox_group_l2,
    prox_l1,
    resolvent_from_prox,
)
from projsplit.problems.base import (
    ExperimentSetup,
    ProblemConfigError,
    ReferenceSolution,
    build_block,
)
from projsplit.problems.reference import (
    accelerated_proximal_gradient,
    certify,
    reference_solve,
)
from projsplit.solver import BlockScheme, InitialState, ProblemSpec
from projsplit.spaces import GammaMetric, LinearMap, PrimalDualPoint

group_logistic_logger = logging.getLogger('Group Logistic Problem')

Groups = Tuple[Tuple[int, ...], ...]


@dataclass(frozen=True)
class GroupLogisticInstance:
    """Sparse group logistic regression on z = (x0, x).

    minimize sum_i log(1 + exp(-y_i(x0 + a_i'x))) + lam1 ||x||_1
             + lam2 sum_g ||x_g||_2

    Groups index the coefficient vector x; the intercept x0 is unpenalized.
    """

    A: np.ndarray
    labels: np.ndarray
    groups: Groups
    lam1: float
    lam2: float
    normalized: bool = True
    seed: Optional[int] = None

    @property
    def n_samples(self) -> int:
        return self.A.shape[0]

    @property
    def dim(self) -> int:
        """Dimension of z, coefficients plus intercept."""
        return self.A.shape[1] + 1

    @property
    def shifted_groups(self) -> Groups:
        """Groups as indices into z, skipping the intercept."""
        return tuple(tuple(i + 1 for i in group) for group in self.groups)


def group_logistic_objective(
    z: np.ndarray, instance: GroupLogisticInstance
) -> float:
    x = z[1:]
    group_norms = sum(
        float(np.linalg.norm(x[np.asarray(group, dtype=np.intp)]))
        for group in instance.groups
    )
    return (
        logistic_loss(z[0], x, instance.A, instance.labels)
        + instance.lam1 * float(np.sum(np.abs(x)))
        + instance.lam2 * group_norms
    )


def contiguous_groups(d: int, n_groups: int) -> Groups:
    """Split range(d) into n_groups consecutive groups of near-equal size."""
    if not 1 <= n_groups <= d:
        raise ProblemConfigError(
            f'Need 1 <= n_groups <= d, got n_groups={n_groups}, d={d}.'
        )
    return tuple(
        tuple(int(i) for i in chunk)
        for chunk in np.array_split(np.arange(d), n_groups)
    )


def group_logistic_setup(
    instance: GroupLogisticInstance,
    gamma: Optional[float] = None,
    scheme: BlockScheme = BlockScheme.ONE_STEP_BACKTRACK,
    alpha: float = 0.1,
    rho: Optional[float] = None,
    beta: float = DEFAULT_BETA,
    delta: float = BACKTRACK_DELTA,
    rho_hat: float = float('inf'),
    trial_rule: TrialRule = TrialRule.GROW,
    growth: float = BACKTRACK_GROWTH,
) -> ExperimentSetup:
    """Block 1: lam1 l1 penalty plus the logistic gradient; block 2: the group penalty."""
    dim = instance.dim
    scheme = BlockScheme(scheme)
    if gamma is None:
        gamma = GROUP_LOGISTIC_GAMMA.get(instance.lam1, 1.0)

    forward = forward_from_grad(
        GradSpec(GradKind.LOGISTIC, instance.A, instance.labels)
    )
    zero = np.zeros(dim)
    w_hat = forward.func(zero)

    backtrack = None
    if scheme in (
        BlockScheme.ONE_STEP_BACKTRACK,
        BlockScheme.TWO_STEP_BACKTRACK,
    ):
        backtrack = BacktrackConfig(
            delta=delta,
            rho_hat=rho_hat,
            rho0=1.0 if rho is None else rho,
            theta_hat=zero,
            w_hat=w_hat,
            trial_rule=trial_rule,
            growth=growth,
        )

    try:
        sparsity = resolvent_from_prox(
            ProxSpec(ProxKind.L1, scale=instance.lam1, free=(0,)), dim
        )
        grouping = resolvent_from_prox(
            ProxSpec(
                ProxKind.GROUP_L2,
                scale=instance.lam2,
                groups=instance.shifted_groups,
            ),
            dim,
        )
    except OperatorConfigError as e:
        raise ProblemConfigError(f'Invalid group logistic penalty: {e}') from e

    blocks = [
        build_block(
            sparsity,
            forward,
            LinearMap.identity(dim),
            scheme,
            alpha=alpha,
            rho=rho,
            backtrack=backtrack,
            name='l1_logistic',
        ),
        build_block(
            grouping,
            ForwardOperator.zero(dim),
            LinearMap.identity(dim),
            BlockScheme.ONE_STEP_FIXED,
            alpha=1.0,
            rho=1.0,
            rho_link=0,
            name='group_l2',
        ),
    ]
    problem = ProblemSpec(blocks, GammaMetric(gamma), beta)
    initial = InitialState(
        PrimalDualPoint(zero, (zero,)),
        x0=[zero, zero],
        y0=[w_hat, zero],
    )
    return ExperimentSetup(instance, problem, initial)


@benchmark_with(group_logistic_logger)
def gen_group_logistic(
    n: int,
    d: int,
    lam: float,
    seed: Optional[int] = None,
    n_groups: Optional[int] = None,
    groups: Optional[Sequence[Sequence[int]]] = None,
    lam2: Optional[float] = None,
    normalize: bool = True,
    active_groups: int = 2,
    **setup_options,
) -> ExperimentSetup:
    """Synthetic group-sparse classification data.

    Labels come from a planted coefficient vector supported on
    `active_groups` groups, with label noise from a logistic draw.

    Args:
        n (int): Number of samples.
        d (int): Number of features.
        lam (float): l1 weight; also the group weight unless `lam2` is given.
        seed (Optional[int]): Random seed.
        n_groups (Optional[int]): Number of contiguous groups when `groups` is omitted.
        groups (Optional[Sequence[Sequence[int]]]): Explicit disjoint groups over range(d).
        lam2 (Optional[float]): Group weight.
        normalize (bool): Scale data columns to unit norm.
        active_groups (int): Groups carrying the planted signal.
        **setup_options: Forwarded to `group_logistic_setup`.

    Raises:
        ProblemConfigError: On an empty or overlapping group, or bad sizes.
    """
    if n < 1 or d < 1:
        raise ProblemConfigError(f'Need n >= 1 and d >= 1, got n={n}, d={d}.')
    if lam < 0 or (lam2 is not None and lam2 < 0):
        raise ProblemConfigError('Penalty weights must be nonnegative.')

    if groups is None:
        groups = contiguous_groups(d, n_groups or 1)
    groups = tuple(tuple(int(i) for i in group) for group in groups)
    if any(len(group) == 0 for group in groups):
        raise ProblemConfigError('Groups must be non-empty.')

    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, d))
    if normalize:
        norms = np.linalg.norm(A, axis=0)
        A = A / np.where(norms > 0, norms, 1.0)

    signal = np.zeros(d)
    chosen = rng.choice(
        len(groups), size=min(active_groups, len(groups)), replace=False
    )
    for g in chosen:
        index = np.asarray(groups[g], dtype=np.intp)
        signal[index] = rng.standard_normal(index.shape[0])
    margins = A @ signal * np.sqrt(n)
    labels = np.where(
        rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-margins)), 1.0, -1.0
    )

    group_logistic_logger.info(
        f'Generated group logistic instance n={n}, d={d}, {len(groups)} groups, lam={lam}.'
    )
    instance = GroupLogisticInstance(
        A,
        labels,
        groups,
        lam,
        lam if lam2 is None else lam2,
        normalize,
        seed,
    )
    return group_logistic_setup(instance, **setup_options)


def sparse_group_prox(
    t: np.ndarray, step: float, instance: GroupLogisticInstance
) -> np.ndarray:
    """prox of step*(lam1||x||_1 + lam2 sum||x_g||), intercept untouched."""
    shrunk = np.array(t, dtype=np.float64)
    shrunk[1:] = prox_l1(t[1:], step * instance.lam1)
    return prox_group_l2(shrunk, step * instance.lam2, instance.shifted_groups)


@reference_solve.register
def _(instance: GroupLogisticInstance) -> ReferenceSolution:
    spec = GradSpec(GradKind.LOGISTIC, instance.A, instance.labels)
    grad = spec.gradient()
    lipschitz = spec.estimate_lipschitz()

    def smooth(z):
        return logistic_loss(z[0], z[1:], instance.A, instance.labels)

    result = accelerated_proximal_gradient(
        smooth,
        grad,
        lambda t, s: sparse_group_prox(t, s, instance),
        np.zeros(instance.dim),
        stepsize=1.0 / lipschitz if lipschitz > 0 else 1.0,
    )

    z = result.x
    s = result.stepsize
    shifted = z - s * grad(z)
    before_groups = shifted.copy()
    before_groups[1:] = prox_l1(shifted[1:], s * instance.lam1)
    dual = (z - before_groups) / s

    return certify(
        ReferenceSolution(
            x=z,
            objective=group_logistic_objective(z, instance),
            method='accelerated_proximal_gradient',
            kkt_residual=result.residual,
            duals=(dual,),
        )
    )
