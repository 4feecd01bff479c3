import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from projsplit.constants import DEFAULT_BETA, DEFAULT_PI_TOL
from projsplit.spaces import (
    DimensionMismatchError,
    GammaMetric,
    LinearMap,
    PrimalDualPoint,
    as_vector,
)

separator_logger = logging.getLogger('Hyperplane Projection')


class SeparatorError(Exception):
    """Exception raised when a separator or its projection is misconfigured."""

    pass


@dataclass(frozen=True)
class BlockPair:
    """A point (x_i, y_i) on the graph of A_i + B_i."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'x', as_vector(self.x, 'x'))
        object.__setattr__(self, 'y', as_vector(self.y, 'y'))
        if self.x.shape != self.y.shape:
            raise DimensionMismatchError(
                f'Pair with x of shape {self.x.shape} and y of shape {self.y.shape}.'
            )


@dataclass(frozen=True)
class HyperplaneData:
    """Affine separator phi(p) = <z, v> + sum <w_i, u_i> - sum <x_i, y_i>.

    Attributes:
        u (Tuple[np.ndarray, ...]): u_i = x_i - G_i x_n for i < n.
        v (np.ndarray): v = sum_{i<n} G_i^* y_i + y_n.
        pi (float): Squared gamma-norm of the gradient, ||u||^2 + ||v||^2 / gamma.
        xy_inner (float): The constant term sum_i <x_i, y_i>.
        x_last (np.ndarray): x_n, the primal part of a terminal point.
        y_heads (Tuple[np.ndarray, ...]): y_1..y_{n-1}, the dual part of a terminal point.
        gamma (float): Dual scaling the data was built with.
    """

    u: Tuple[np.ndarray, ...]
    v: np.ndarray
    pi: float
    xy_inner: float
    x_last: np.ndarray
    y_heads: Tuple[np.ndarray, ...]
    gamma: float

    def phi(self, p: PrimalDualPoint) -> float:
        if p.z.shape != self.v.shape or len(p.w) != len(self.u):
            raise DimensionMismatchError(
                'Point does not live in the space of this separator.'
            )
        value = float(p.z @ self.v)
        for wi, ui in zip(p.w, self.u):
            value += float(wi @ ui)
        return value - self.xy_inner

    def gradient(self) -> PrimalDualPoint:
        """Gradient of phi in the gamma-metric: (v / gamma, u_1, ..., u_{n-1})."""
        return PrimalDualPoint(self.v / self.gamma, self.u)


@dataclass(frozen=True)
class ProjectionOutcome:
    terminal: bool
    next_point: PrimalDualPoint
    pi: float
    tau: float
    phi_value: float


def _check_pairs(pairs: Sequence[BlockPair], maps: Sequence[LinearMap]):
    if len(pairs) < 1:
        raise SeparatorError('A separator needs at least one block pair.')

    if len(pairs) != len(maps):
        raise DimensionMismatchError(
            f'{len(pairs)} block pairs given for {len(maps)} linear maps.'
        )

    if not maps[-1].is_identity:
        raise SeparatorError('The last block must use the identity map.')

    primal_dim = maps[-1].domain_dim
    for index, (pair, linear_map) in enumerate(zip(pairs, maps), start=1):
        if linear_map.domain_dim != primal_dim:
            raise DimensionMismatchError(
                f'Map {index} has domain dimension {linear_map.domain_dim}, expected {primal_dim}.'
            )
        if pair.x.shape != (linear_map.codomain_dim,):
            raise DimensionMismatchError(
                f'Pair {index} has dimension {pair.x.shape[0]}, map {index} expects {linear_map.codomain_dim}.'
            )


def _check_point(p: PrimalDualPoint, maps: Sequence[LinearMap]):
    if p.n_blocks != len(maps):
        raise DimensionMismatchError(
            f'Point has {p.n_blocks} blocks, separator has {len(maps)}.'
        )
    if p.z.shape != (maps[-1].domain_dim,):
        raise DimensionMismatchError(
            f'z has shape {p.z.shape}, expected ({maps[-1].domain_dim},).'
        )


def _affine_pieces(
    pairs: Sequence[BlockPair], maps: Sequence[LinearMap]
) -> Tuple[Tuple[np.ndarray, ...], np.ndarray, float]:
    x_last = pairs[-1].x
    u = tuple(
        pair.x - linear_map.apply(x_last)
        for pair, linear_map in zip(pairs[:-1], maps[:-1])
    )
    v = pairs[-1].y
    for pair, linear_map in zip(pairs[:-1], maps[:-1]):
        v = v + linear_map.apply_adjoint(pair.y)
    xy_inner = float(sum(pair.x @ pair.y for pair in pairs))
    return u, v, xy_inner


def eval_separator(
    p: PrimalDualPoint,
    pairs: Sequence[BlockPair],
    maps: Sequence[LinearMap],
) -> float:
    """Evaluate phi(p) in the form <z, sum G_i^* y_i> + sum <w_i, u_i> - sum <x_i, y_i>.

    Args:
        p (PrimalDualPoint): Point at which the separator is evaluated.
        pairs (Sequence[BlockPair]): One graph pair per block.
        maps (Sequence[LinearMap]): G_1..G_n, the last one the identity.

    Returns:
        float: The separator value.

    Raises:
        DimensionMismatchError: On inconsistent shapes.
        SeparatorError: If there are no pairs or G_n is not the identity.

    Example:
        >>> import numpy as np
        >>> from projsplit.spaces import LinearMap, PrimalDualPoint
        >>> eval_separator(
        ...     PrimalDualPoint(np.ones(1)),
        ...     [BlockPair(np.zeros(1), np.ones(1))],
        ...     [LinearMap.identity(1)],
        ... )
        1.0
    """
    _check_pairs(pairs, maps)
    _check_point(p, maps)
    u, v, xy_inner = _affine_pieces(pairs, maps)
    value = float(p.z @ v)
    for wi, ui in zip(p.w, u):
        value += float(wi @ ui)
    return value - xy_inner


def block_separator_terms(
    p: PrimalDualPoint,
    pairs: Sequence[BlockPair],
    maps: Sequence[LinearMap],
) -> List[float]:
    """Per-block terms phi_i = <G_i z - x_i, y_i - w_i>, with w_n derived from p.

    Their sum is the separator value.
    """
    _check_pairs(pairs, maps)
    _check_point(p, maps)
    duals = p.duals(maps)
    return [
        float((linear_map.apply(p.z) - pair.x) @ (pair.y - wi))
        for pair, linear_map, wi in zip(pairs, maps, duals)
    ]


def separator_gradient(
    pairs: Sequence[BlockPair],
    maps: Sequence[LinearMap],
    metric: GammaMetric,
) -> HyperplaneData:
    _check_pairs(pairs, maps)
    u, v, xy_inner = _affine_pieces(pairs, maps)
    pi = float(sum(ui @ ui for ui in u)) + float(v @ v) / metric.gamma
    return HyperplaneData(
        u=u,
        v=v,
        pi=pi,
        xy_inner=xy_inner,
        x_last=pairs[-1].x,
        y_heads=tuple(pair.y for pair in pairs[:-1]),
        gamma=metric.gamma,
    )


def project_to_hplane(
    p: PrimalDualPoint,
    h: HyperplaneData,
    metric: GammaMetric,
    beta: float = DEFAULT_BETA,
    pi_tol: float = DEFAULT_PI_TOL,
) -> ProjectionOutcome:
    """Relaxed projection of p onto the halfspace {phi <= 0}.

    With pi at or below `pi_tol` the pairs already form a solution and the
    outcome is terminal, carrying (x_n, y_1, ..., y_{n-1}). Otherwise
    tau = beta * max(0, phi(p)) / pi and the point moves against the
    gradient: z - tau * v / gamma, w_i - tau * u_i.

    Args:
        p (PrimalDualPoint): Current iterate.
        h (HyperplaneData): Separator built from the current pairs.
        metric (GammaMetric): Must match the metric `h` was built with.
        beta (float): Relaxation factor in (0, 2).
        pi_tol (float): Terminal threshold on pi.

    Returns:
        ProjectionOutcome: The projected point and step diagnostics.

    Raises:
        SeparatorError: If beta is out of range, the metrics differ or pi is negative.
    """
    if not 0 < beta < 2:
        raise SeparatorError(f'beta must lie in (0, 2), got {beta}.')

    if metric.gamma != h.gamma:
        raise SeparatorError(
            f'Hyperplane built with gamma={h.gamma} but projected with gamma={metric.gamma}.'
        )

    if h.pi < 0:
        raise SeparatorError(f'pi must be nonnegative, got {h.pi}.')

    phi_value = h.phi(p)

    if h.pi <= pi_tol:
        separator_logger.debug(
            f'pi={h.pi:.3e} at or below {pi_tol:.1e}; pairs form a solution.'
        )
        return ProjectionOutcome(
            terminal=True,
            next_point=PrimalDualPoint(h.x_last, h.y_heads),
            pi=h.pi,
            tau=0.0,
            phi_value=phi_value,
        )

    tau = beta * max(0.0, phi_value) / h.pi
    if tau == 0.0:
        next_point = p
    else:
        next_point = PrimalDualPoint(
            p.z - (tau / metric.gamma) * h.v,
            tuple(wi - tau * ui for wi, ui in zip(p.w, h.u)),
        )

    return ProjectionOutcome(
        terminal=False,
        next_point=next_point,
        pi=h.pi,
        tau=tau,
        phi_value=phi_value,
    )
