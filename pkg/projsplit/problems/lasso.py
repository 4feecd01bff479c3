import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from kami_logging import benchmark_with

from projsplit.block_updates import BacktrackConfig, TrialRule
from projsplit.constants import BACKTRACK_DELTA, DEFAULT_BETA
from projsplit.operators.forward import GradKind, GradSpec, forward_from_grad
from projsplit.operators.prox import (
    ProxKind,
    ProxSpec,
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

lasso_logger = logging.getLogger('Lasso Problem')


@dataclass(frozen=True)
class LassoInstance:
    """min_z (1/2n)||Xz - y||^2 + lam ||z||_1."""

    X: np.ndarray
    y: np.ndarray
    lam: float
    seed: Optional[int] = None

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


def lasso_objective(z: np.ndarray, instance: LassoInstance) -> float:
    residual = instance.X @ z - instance.y
    return float(residual @ residual) / (
        2 * instance.n_samples
    ) + instance.lam * float(np.sum(np.abs(z)))


def lasso_setup(
    instance: LassoInstance,
    scheme: BlockScheme = BlockScheme.ONE_STEP_BACKTRACK,
    alpha: float = 0.5,
    rho: Optional[float] = None,
    gamma: float = 1.0,
    beta: float = DEFAULT_BETA,
    delta: float = BACKTRACK_DELTA,
    rho_hat: float = float('inf'),
    trial_rule: TrialRule = TrialRule.UPPER,
) -> ExperimentSetup:
    """Single-block splitting A = lam d||.||_1, B = least-squares gradient, G = I."""
    if instance.lam < 0:
        raise ProblemConfigError(f'lam must be nonnegative, got {instance.lam}.')

    dim = instance.dim
    forward = forward_from_grad(
        GradSpec(GradKind.LEAST_SQUARES, matrix=instance.X, vector=instance.y)
    )
    resolvent = resolvent_from_prox(
        ProxSpec(ProxKind.L1, scale=instance.lam), dim
    )
    backtrack = None
    if BlockScheme(scheme) in (
        BlockScheme.ONE_STEP_BACKTRACK,
        BlockScheme.TWO_STEP_BACKTRACK,
    ):
        backtrack = BacktrackConfig(
            delta=delta,
            rho_hat=rho_hat,
            rho0=1.0 if rho is None else rho,
            trial_rule=trial_rule,
        )
    block = build_block(
        resolvent,
        forward,
        LinearMap.identity(dim),
        scheme,
        alpha=alpha,
        rho=rho,
        backtrack=backtrack,
        name='lasso',
    )
    problem = ProblemSpec([block], GammaMetric(gamma), beta)
    initial = InitialState(PrimalDualPoint(np.zeros(dim)), [np.zeros(dim)])
    return ExperimentSetup(instance, problem, initial)


@benchmark_with(lasso_logger)
def gen_lasso(
    n: int,
    d: int,
    lam: float,
    seed: Optional[int] = None,
    sparsity: float = 0.2,
    noise: float = 0.1,
    **setup_options,
) -> ExperimentSetup:
    """Random lasso instance with a planted sparse signal.

    Args:
        n (int): Number of samples.
        d (int): Number of features.
        lam (float): l1 weight.
        seed (Optional[int]): Random seed.
        sparsity (float): Fraction of nonzero coefficients in the planted signal.
        noise (float): Standard deviation of the observation noise.
        **setup_options: Forwarded to `lasso_setup`.
    """
    if n < 1 or d < 1:
        raise ProblemConfigError(f'Need n >= 1 and d >= 1, got n={n}, d={d}.')

    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    signal = np.zeros(d)
    support = rng.choice(d, size=max(1, int(sparsity * d)), replace=False)
    signal[support] = rng.standard_normal(support.shape[0])
    y = X @ signal + noise * rng.standard_normal(n)

    lasso_logger.info(f'Generated lasso instance n={n}, d={d}, lam={lam}.')
    return lasso_setup(LassoInstance(X, y, lam, seed), **setup_options)


def scalar_lasso(**setup_options) -> ExperimentSetup:
    """The instance 0 in d|z| + (z - 3), solved by z = 2."""
    instance = LassoInstance(np.ones((1, 1)), np.array([3.0]), 1.0)
    return lasso_setup(instance, **setup_options)


@reference_solve.register
def _(instance: LassoInstance) -> ReferenceSolution:
    n = instance.n_samples
    lipschitz = float(np.linalg.norm(instance.X, 2) ** 2) / n

    def smooth(z):
        residual = instance.X @ z - instance.y
        return float(residual @ residual) / (2 * n)

    def grad(z):
        return instance.X.T @ (instance.X @ z - instance.y) / n

    result = accelerated_proximal_gradient(
        smooth,
        grad,
        lambda t, s: prox_l1(t, s * instance.lam),
        np.zeros(instance.dim),
        stepsize=1.0 / lipschitz if lipschitz > 0 else 1.0,
    )
    return certify(
        ReferenceSolution(
            x=result.x,
            objective=lasso_objective(result.x, instance),
            method='accelerated_proximal_gradient',
            kkt_residual=result.residual,
        )
    )
