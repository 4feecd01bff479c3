from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from projsplit.operators.base import (
    OperatorConfigError,
    Resolvent,
    operators_logger,
)
from projsplit.spaces import DimensionMismatchError


def prox_l1(t: np.ndarray, scale: float) -> np.ndarray:
    """Componentwise soft-threshold sign(t) * max(|t| - scale, 0).

    Example:
        >>> import numpy as np
        >>> prox_l1(np.array([2.5, 0.5, -3.0]), 1.0).tolist()
        [1.5, 0.0, -2.0]
    """
    if scale < 0:
        raise OperatorConfigError(
            f'Soft-threshold level must be nonnegative, got {scale}.'
        )
    return np.sign(t) * np.maximum(np.abs(t) - scale, 0.0)


def _check_groups(groups: Sequence[Sequence[int]], dim: Optional[int] = None):
    seen = set()
    for index, group in enumerate(groups):
        if len(group) == 0:
            raise OperatorConfigError(f'Group {index} is empty.')
        for coordinate in group:
            if coordinate < 0 or (dim is not None and coordinate >= dim):
                raise OperatorConfigError(
                    f'Group {index} holds coordinate {coordinate} outside the dimension {dim}.'
                )
            if coordinate in seen:
                raise OperatorConfigError(
                    f'Coordinate {coordinate} belongs to more than one group.'
                )
            seen.add(coordinate)


def prox_group_l2(
    t: np.ndarray, scale: float, groups: Sequence[Sequence[int]]
) -> np.ndarray:
    """Block soft-threshold x_g = t_g * max(1 - scale / ||t_g||, 0) per group.

    Coordinates outside every group pass through unchanged.
    """
    if scale < 0:
        raise OperatorConfigError(
            f'Group shrink level must be nonnegative, got {scale}.'
        )
    _check_groups(groups, t.shape[0])

    x = np.array(t, dtype=np.float64)
    for group in groups:
        index = np.asarray(group, dtype=np.intp)
        norm = np.linalg.norm(t[index])
        factor = max(1.0 - scale / norm, 0.0) if norm > 0 else 0.0
        x[index] = factor * t[index]
    return x


def project_simplex(t: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {x : sum(x) = 1, x >= 0}.

    Sort-based thresholding: find the level theta with
    sum(max(t - theta, 0)) = 1 from the descending partial sums.

    Example:
        >>> import numpy as np
        >>> project_simplex(np.array([2.0, 0.0])).tolist()
        [1.0, 0.0]
    """
    if t.shape[0] < 1:
        raise DimensionMismatchError('Cannot project an empty vector.')

    ordered = np.sort(t)[::-1]
    partial_sums = np.cumsum(ordered) - 1.0
    ranks = np.arange(1, t.shape[0] + 1)
    active = ordered - partial_sums / ranks > 0
    support_size = ranks[active][-1]
    theta = partial_sums[support_size - 1] / support_size
    return np.maximum(t - theta, 0.0)


def project_halfspace(t: np.ndarray, normal: np.ndarray, offset: float):
    """Projection onto {x : <normal, x> >= offset}."""
    norm_sq = float(normal @ normal)
    if norm_sq == 0:
        raise OperatorConfigError('Halfspace normal must be nonzero.')

    gap = offset - float(normal @ t)
    if gap <= 0:
        return np.array(t, dtype=np.float64)
    return t + (gap / norm_sq) * normal


def project_linf_ball(t: np.ndarray, radius: float) -> np.ndarray:
    if radius < 0:
        raise OperatorConfigError(
            f'Ball radius must be nonnegative, got {radius}.'
        )
    return np.clip(t, -radius, radius)


class ProxKind(str, Enum):
    ZERO = 'zero'
    L1 = 'l1'
    GROUP_L2 = 'group_l2'
    SIMPLEX = 'indicator_simplex'
    HALFSPACE = 'indicator_halfspace'


@dataclass(frozen=True)
class ProxSpec:
    """Description of a backward operator A = subdifferential of f.

    Attributes:
        kind (ProxKind): Which function f is.
        scale (float): Weight of the l1 or group penalty.
        groups (Tuple[Tuple[int, ...], ...]): Disjoint index sets for group_l2.
        normal (Optional[np.ndarray]): Halfspace normal m.
        offset (float): Halfspace level r in <m, x> >= r.
        free (Tuple[int, ...]): Coordinates left untouched by the penalty.
        shift (Optional[np.ndarray]): Translation s, giving f(x - s).
    """

    kind: ProxKind
    scale: float = 1.0
    groups: Tuple[Tuple[int, ...], ...] = ()
    normal: Optional[np.ndarray] = None
    offset: float = 0.0
    free: Tuple[int, ...] = ()
    shift: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, 'kind', ProxKind(self.kind))
        object.__setattr__(
            self, 'groups', tuple(tuple(g) for g in self.groups)
        )
        object.__setattr__(self, 'free', tuple(self.free))

        if self.scale < 0:
            raise OperatorConfigError(
                f'Penalty weight must be nonnegative, got {self.scale}.'
            )

        if self.kind == ProxKind.GROUP_L2:
            _check_groups(self.groups)

        if self.kind == ProxKind.HALFSPACE:
            if self.normal is None or not np.any(self.normal):
                raise OperatorConfigError(
                    'Halfspace indicator needs a nonzero normal vector.'
                )
            object.__setattr__(
                self, 'normal', np.asarray(self.normal, dtype=np.float64)
            )

        if self.shift is not None:
            object.__setattr__(
                self, 'shift', np.asarray(self.shift, dtype=np.float64)
            )

    def validate_dim(self, dim: int):
        if self.kind == ProxKind.GROUP_L2:
            _check_groups(self.groups, dim)
        if self.kind == ProxKind.HALFSPACE and self.normal.shape != (dim,):
            raise OperatorConfigError(
                f'Halfspace normal has shape {self.normal.shape}, expected ({dim},).'
            )
        if self.shift is not None and self.shift.shape != (dim,):
            raise OperatorConfigError(
                f'Shift has shape {self.shift.shape}, expected ({dim},).'
            )
        if any(i < 0 or i >= dim for i in self.free):
            raise OperatorConfigError(
                f'Free coordinates {self.free} exceed the dimension {dim}.'
            )

    def _base_prox(self, t: np.ndarray, rho: float) -> np.ndarray:
        if self.kind == ProxKind.ZERO:
            return np.array(t, dtype=np.float64)
        if self.kind == ProxKind.L1:
            return prox_l1(t, rho * self.scale)
        if self.kind == ProxKind.GROUP_L2:
            return prox_group_l2(t, rho * self.scale, self.groups)
        if self.kind == ProxKind.SIMPLEX:
            return project_simplex(t)
        return project_halfspace(t, self.normal, self.offset)

    def prox(self, t: np.ndarray, rho: float) -> np.ndarray:
        """prox_{rho f}(t) with the translation and free coordinates applied."""
        if self.shift is not None:
            x = self.shift + self._base_prox(t - self.shift, rho)
        else:
            x = self._base_prox(t, rho)

        if self.free:
            free = np.asarray(self.free, dtype=np.intp)
            x[free] = t[free]
        return x


def resolvent_from_prox(spec: ProxSpec, dim: Optional[int] = None):
    """Wrap a prox description as a Resolvent returning (x, (t - x) / rho)."""
    if dim is not None:
        spec.validate_dim(dim)

    operators_logger.debug(f'Building {spec.kind.value} resolvent.')
    return Resolvent(spec.prox, name=spec.kind.value)
