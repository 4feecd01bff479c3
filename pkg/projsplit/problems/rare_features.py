import logging
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional

import numpy as np
from kami_logging import benchmark_with
from scipy import sparse
from scipy.linalg import cho_factor, cho_solve

from projsplit.block_updates import BacktrackConfig, TrialRule
from projsplit.constants import (
    BACKTRACK_DELTA,
    DEFAULT_BETA,
    RARE_FEATURE_GAMMA,
    REFERENCE_MAX_ITERS,
    REFERENCE_TOL,
)
from projsplit.operators.base import ForwardOperator
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
from projsplit.problems.reference import certify, reference_solve
from projsplit.solver import BlockScheme, InitialState, ProblemSpec
from projsplit.spaces import GammaMetric, LinearMap, PrimalDualPoint

rare_features_logger = logging.getLogger('Rare Features Problem')


def _branching_for(leaves: int, depth: int) -> int:
    branching = 2
    while branching**depth < leaves:
        branching += 1
    return branching


def balanced_tree_matrix(
    leaves: int, depth: int, branching: Optional[int] = None
) -> sparse.csr_matrix:
    """Leaf-descendant matrix H of a balanced similarity tree.

    H[i, j] = 1 when feature i is a leaf below (or equal to) node j.
    Columns are the leaves first, then the internal nodes level by level,
    and the root last. Internal levels split their leaf range into
    `branching` contiguous children; singleton children are leaves.

    Args:
        leaves (int): Number of features.
        depth (int): Number of edges from the root to the leaves.
        branching (Optional[int]): Children per internal node; the smallest
            b with b**depth >= leaves when omitted.

    Example:
        >>> balanced_tree_matrix(2, 1).toarray().tolist()
        [[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]
    """
    if leaves < 1 or depth < 1:
        raise ProblemConfigError(
            f'Need leaves >= 1 and depth >= 1, got leaves={leaves}, depth={depth}.'
        )
    if branching is None:
        branching = _branching_for(leaves, depth)
    if branching < 2:
        raise ProblemConfigError(f'branching must be at least 2, got {branching}.')

    internal: List[np.ndarray] = []
    level = [np.arange(leaves)]
    for _ in range(1, depth):
        children = []
        for node in level:
            for child in np.array_split(node, min(branching, node.shape[0])):
                if child.shape[0] > 1:
                    children.append(child)
        internal.extend(children)
        level = children

    columns = [np.array([i]) for i in range(leaves)] + internal
    columns.append(np.arange(leaves))

    rows = np.concatenate(columns)
    cols = np.concatenate(
        [np.full(column.shape[0], j) for j, column in enumerate(columns)]
    )
    return sparse.csr_matrix(
        (np.ones(rows.shape[0]), (rows, cols)), shape=(leaves, len(columns))
    )


@dataclass(frozen=True)
class RareFeatureInstance:
    """Tree-aggregated regression over z = (beta0, gamma).

    minimize (1/2n)||beta0 e + XH gamma - y||^2
             + lam (mu ||gamma_{-r}||_1 + (1 - mu)||H gamma||_1)
    """

    X: sparse.csr_matrix
    H: sparse.csr_matrix
    y: np.ndarray
    lam: float
    mu: float
    seed: Optional[int] = None

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.H.shape[1]

    @property
    def dim(self) -> int:
        return self.n_nodes + 1

    @property
    def root(self) -> int:
        """Index of the root coefficient inside z."""
        return self.n_nodes

    @cached_property
    def design(self) -> sparse.csr_matrix:
        """[e | XH], the least-squares design acting on z."""
        ones = sparse.csr_matrix(np.ones((self.n_samples, 1)))
        return sparse.hstack([ones, self.X @ self.H], format='csr')

    @cached_property
    def aggregation(self) -> sparse.csr_matrix:
        """[0 | H], mapping z to the leaf coefficients H gamma."""
        zeros = sparse.csr_matrix((self.H.shape[0], 1))
        return sparse.hstack([zeros, self.H], format='csr')


def leaf_coefficients(z: np.ndarray, instance: RareFeatureInstance) -> np.ndarray:
    return np.asarray(instance.H @ z[1:], dtype=np.float64)


def rare_feature_objective(
    z: np.ndarray, instance: RareFeatureInstance
) -> float:
    residual = np.asarray(instance.design @ z, dtype=np.float64) - instance.y
    gamma = z[1:]
    return (
        float(residual @ residual) / (2 * instance.n_samples)
        + instance.lam * instance.mu * float(np.sum(np.abs(gamma[:-1])))
        + instance.lam
        * (1 - instance.mu)
        * float(np.sum(np.abs(leaf_coefficients(z, instance))))
    )


def rare_features_setup(
    instance: RareFeatureInstance,
    gamma: Optional[float] = None,
    scheme: BlockScheme = BlockScheme.ONE_STEP_BACKTRACK,
    alpha: float = 0.1,
    rho: Optional[float] = None,
    beta: float = DEFAULT_BETA,
    delta: float = BACKTRACK_DELTA,
    rho_hat: float = float('inf'),
    trial_rule: TrialRule = TrialRule.PREVIOUS,
    rho_aggregation: float = 1.0,
) -> ExperimentSetup:
    """Two blocks: lam(1 - mu)||.||_1 through G_1 = [0 | H], then least
    squares with lam mu ||gamma_{-r}||_1 on z itself.

    The aggregation block keeps a fixed stepsize `rho_aggregation` with
    alpha = 1; the least-squares block uses `scheme`.
    """
    d = instance.H.shape[0]
    dim = instance.dim
    scheme = BlockScheme(scheme)
    if gamma is None:
        gamma = RARE_FEATURE_GAMMA.get(instance.lam, 1.0)

    forward = forward_from_grad(
        GradSpec(GradKind.LEAST_SQUARES, instance.design, instance.y)
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
        )

    blocks = [
        build_block(
            resolvent_from_prox(
                ProxSpec(ProxKind.L1, scale=instance.lam * (1 - instance.mu)),
                d,
            ),
            ForwardOperator.zero(d),
            LinearMap.from_matrix(instance.aggregation),
            BlockScheme.ONE_STEP_FIXED,
            alpha=1.0,
            rho=rho_aggregation,
            name='leaf_l1',
        ),
        build_block(
            resolvent_from_prox(
                ProxSpec(
                    ProxKind.L1,
                    scale=instance.lam * instance.mu,
                    free=(0, instance.root),
                ),
                dim,
            ),
            forward,
            LinearMap.identity(dim),
            scheme,
            alpha=alpha,
            rho=rho,
            backtrack=backtrack,
            name='node_l1_least_squares',
        ),
    ]
    problem = ProblemSpec(blocks, GammaMetric(gamma), beta)
    initial = InitialState(
        PrimalDualPoint(zero, (np.zeros(d),)),
        x0=[np.zeros(d), zero],
        y0=[np.zeros(d), w_hat],
    )
    return ExperimentSetup(instance, problem, initial)


@benchmark_with(rare_features_logger)
def gen_rare_features(
    n: int,
    leaves: int = 32,
    depth: int = 5,
    lam: float = 1e-2,
    mu: float = 0.5,
    seed: Optional[int] = None,
    rarity: float = 0.05,
    noise: float = 0.1,
    **setup_options,
) -> ExperimentSetup:
    """Synthetic count data with rare features and a planted tree structure.

    Feature j is nonzero in a sample with a probability between `rarity`
    and 0.5; nonzero entries are Poisson counts. The planted coefficients
    come from a few nonzero internal nodes, so leaves under the same node
    share a coefficient.

    Raises:
        ProblemConfigError: If mu is outside [0, 1], lam is negative or the
            sizes are invalid.
    """
    if n < 1:
        raise ProblemConfigError(f'Need n >= 1, got {n}.')
    if not 0 <= mu <= 1:
        raise ProblemConfigError(f'mu must lie in [0, 1], got {mu}.')
    if lam < 0:
        raise ProblemConfigError(f'lam must be nonnegative, got {lam}.')

    rng = np.random.default_rng(seed)
    H = balanced_tree_matrix(leaves, depth)

    frequency = rng.uniform(rarity, 0.5, size=leaves)
    mask = rng.uniform(size=(n, leaves)) < frequency
    counts = rng.poisson(2.0, size=(n, leaves)) + 1
    X = sparse.csr_matrix(np.where(mask, counts, 0).astype(np.float64))

    node_weights = np.zeros(H.shape[1])
    planted = rng.choice(
        np.arange(leaves, H.shape[1]),
        size=min(3, H.shape[1] - leaves),
        replace=False,
    )
    node_weights[planted] = rng.standard_normal(planted.shape[0])
    intercept = float(rng.uniform(1.0, 5.0))
    y = (
        intercept
        + np.asarray(X @ (H @ node_weights), dtype=np.float64)
        + noise * rng.standard_normal(n)
    )

    rare_features_logger.info(
        f'Generated rare feature instance n={n}, leaves={leaves}, '
        f'{H.shape[1]} nodes, lam={lam}, mu={mu}.'
    )
    instance = RareFeatureInstance(X, H, y, lam, mu, seed)
    return rare_features_setup(instance, **setup_options)


@dataclass(frozen=True)
class AdmmResult:
    z: np.ndarray
    leaf_dual: np.ndarray
    node_dual: np.ndarray
    residual: float
    iterations: int


def admm_rare_features(
    instance: RareFeatureInstance,
    penalty: float = 1.0,
    tol: float = REFERENCE_TOL,
    max_iters: int = REFERENCE_MAX_ITERS,
) -> AdmmResult:
    """ADMM on z with the copies t = [0 | H]z and s = [0 | I]z.

    The z-step solves (D'D/n + penalty(M'M + S'S))z = D'y/n + ... through
    one Cholesky factorization; the copy steps are soft-thresholds, the
    root copy stays free. Returns the scaled multipliers times `penalty`,
    which are subgradients of the two l1 terms at the copies.
    """
    n = instance.n_samples
    D = instance.design
    M = instance.aggregation
    S = sparse.hstack(
        [sparse.csr_matrix((instance.n_nodes, 1)), sparse.identity(instance.n_nodes)],
        format='csr',
    )
    system = (D.T @ D / n + penalty * (M.T @ M + S.T @ S)).toarray()
    factor = cho_factor(system)
    target = np.asarray(D.T @ instance.y, dtype=np.float64) / n

    leaf_level = instance.lam * (1 - instance.mu) / penalty
    node_level = instance.lam * instance.mu / penalty

    z = np.zeros(instance.dim)
    t = np.zeros(M.shape[0])
    s = np.zeros(instance.n_nodes)
    u = np.zeros_like(t)
    v = np.zeros_like(s)
    residual = float('inf')

    for iteration in range(1, max_iters + 1):
        rhs = target + penalty * (M.T @ (t - u) + S.T @ (s - v))
        z = cho_solve(factor, rhs)

        Mz = M @ z
        Sz = S @ z
        t_old, s_old = t, s
        t = prox_l1(Mz + u, leaf_level)
        s = prox_l1(Sz + v, node_level)
        s[-1] = Sz[-1] + v[-1]

        u = u + Mz - t
        v = v + Sz - s

        primal = max(
            float(np.linalg.norm(Mz - t)), float(np.linalg.norm(Sz - s))
        )
        dual = penalty * float(
            np.linalg.norm(M.T @ (t - t_old) + S.T @ (s - s_old))
        )
        residual = max(primal, dual)
        if residual <= tol * max(1.0, float(np.linalg.norm(z))):
            break

    return AdmmResult(z, penalty * u, penalty * v, residual, iteration)


def _stationarity(
    instance: RareFeatureInstance, result: AdmmResult
) -> float:
    """||grad h(z) + [0|H]'a + [0|I]'b|| with the ADMM subgradients a, b."""
    n = instance.n_samples
    D = instance.design
    grad = np.asarray(
        D.T @ (np.asarray(D @ result.z) - instance.y), dtype=np.float64
    ) / n
    grad[1:] += np.asarray(instance.H.T @ result.leaf_dual) + result.node_dual
    return float(np.linalg.norm(grad))


@reference_solve.register
def _(instance: RareFeatureInstance) -> ReferenceSolution:
    result = admm_rare_features(instance)
    residual = max(result.residual, _stationarity(instance, result))
    rare_features_logger.debug(
        f'ADMM stopped after {result.iterations} iterations.'
    )
    return certify(
        ReferenceSolution(
            x=result.z,
            objective=rare_feature_objective(result.z, instance),
            method='admm',
            kkt_residual=residual,
            duals=(result.leaf_dual,),
        )
    )
