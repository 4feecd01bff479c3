import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

spaces_logger = logging.getLogger('Primal Dual Spaces')


class DimensionMismatchError(Exception):
    """Raised when vectors, points or linear maps have incompatible shapes."""

    pass


class NonFiniteValueError(Exception):
    """Raised when a vector holds NaN or infinite entries."""

    pass


class InvalidMetricError(Exception):
    """Raised when the dual scaling of the product-space metric is not positive."""

    pass


def as_vector(values, name: str = 'vector') -> np.ndarray:
    """Copy `values` into a read-only, finite, one-dimensional float64 array.

    Args:
        values: Anything `numpy.array` accepts; scalars become length-one vectors.
        name (str): Label used in error messages.

    Returns:
        np.ndarray: A read-only copy of the values.

    Raises:
        DimensionMismatchError: If the values are not one-dimensional.
        NonFiniteValueError: If any entry is NaN or infinite.
    """
    vector = np.array(values, dtype=np.float64)

    if vector.ndim == 0:
        vector = vector.reshape(1)

    if vector.ndim != 1:
        raise DimensionMismatchError(
            f'{name} must be one-dimensional, got shape {vector.shape}.'
        )

    if not np.all(np.isfinite(vector)):
        raise NonFiniteValueError(f'{name} contains NaN or infinite entries.')

    vector.flags.writeable = False
    return vector


class LinearMapKind(str, Enum):
    IDENTITY = 'identity'
    DENSE = 'dense'
    SPARSE = 'sparse'


class LinearMap:
    """A bounded linear map G between coordinate spaces.

    Identity maps are never materialized. Adjoints share the underlying
    matrix and only flip an orientation flag, so taking the adjoint twice
    gives back the exact same arithmetic as the original map.

    Attributes:
        kind (LinearMapKind): identity, dense or sparse (CSR) storage.
        matrix: The stored matrix, None for the identity.
        transposed (bool): Whether this map acts as the transpose of `matrix`.
    """

    def __init__(
        self,
        kind: LinearMapKind,
        matrix=None,
        dim: Optional[int] = None,
        transposed: bool = False,
    ):
        self.kind = LinearMapKind(kind)
        self.transposed = transposed

        if self.kind == LinearMapKind.IDENTITY:
            if dim is None or dim < 1:
                raise DimensionMismatchError(
                    'Identity map needs a positive dimension.'
                )
            self.matrix = None
            self._dim = int(dim)
        elif self.kind == LinearMapKind.DENSE:
            self.matrix = np.asarray(matrix, dtype=np.float64)
            if self.matrix.ndim != 2:
                raise DimensionMismatchError(
                    f'Dense map must be a 2-d array, got shape {self.matrix.shape}.'
                )
            self._dim = None
        else:
            self.matrix = sparse.csr_matrix(matrix, dtype=np.float64)
            self._dim = None

    @classmethod
    def identity(cls, dim: int) -> 'LinearMap':
        return cls(LinearMapKind.IDENTITY, dim=dim)

    @classmethod
    def from_matrix(cls, matrix) -> 'LinearMap':
        if sparse.issparse(matrix):
            return cls(LinearMapKind.SPARSE, matrix=matrix)
        return cls(LinearMapKind.DENSE, matrix=matrix)

    @property
    def is_identity(self) -> bool:
        return self.kind == LinearMapKind.IDENTITY

    @property
    def shape(self) -> Tuple[int, int]:
        """(codomain dimension, domain dimension)."""
        if self.is_identity:
            return (self._dim, self._dim)
        rows, cols = self.matrix.shape
        return (cols, rows) if self.transposed else (rows, cols)

    @property
    def domain_dim(self) -> int:
        return self.shape[1]

    @property
    def codomain_dim(self) -> int:
        return self.shape[0]

    def _product(self, vector: np.ndarray, transpose: bool) -> np.ndarray:
        if self.is_identity:
            return vector
        if transpose:
            return np.asarray(self.matrix.T @ vector, dtype=np.float64)
        return np.asarray(self.matrix @ vector, dtype=np.float64)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Return Gx."""
        if x.shape != (self.domain_dim,):
            raise DimensionMismatchError(
                f'Map with domain dimension {self.domain_dim} applied to a vector of shape {x.shape}.'
            )
        return self._product(x, self.transposed)

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        """Return G*y."""
        if y.shape != (self.codomain_dim,):
            raise DimensionMismatchError(
                f'Adjoint of a map with codomain dimension {self.codomain_dim} applied to a vector of shape {y.shape}.'
            )
        return self._product(y, not self.transposed)

    def adjoint(self) -> 'LinearMap':
        if self.is_identity:
            return self
        return LinearMap(
            self.kind, matrix=self.matrix, transposed=not self.transposed
        )

    def to_dense(self) -> np.ndarray:
        if self.is_identity:
            return np.eye(self._dim)
        dense = (
            self.matrix.toarray()
            if self.kind == LinearMapKind.SPARSE
            else self.matrix
        )
        return dense.T.copy() if self.transposed else dense.copy()

    def __repr__(self) -> str:
        return f'LinearMap(kind={self.kind.value}, shape={self.shape})'


def apply_adjoint(linear_map: LinearMap, y: np.ndarray) -> np.ndarray:
    """Transpose action G*y (identity maps return y unchanged)."""
    return linear_map.apply_adjoint(y)


@dataclass(frozen=True)
class GammaMetric:
    """Product-space metric gamma*||z||^2 + sum ||w_i||^2."""

    gamma: float = 1.0

    def __post_init__(self):
        gamma = float(self.gamma)
        if not np.isfinite(gamma) or gamma <= 0:
            raise InvalidMetricError(
                f'gamma must be a positive finite number, got {self.gamma}.'
            )
        object.__setattr__(self, 'gamma', gamma)


@dataclass(frozen=True)
class PrimalDualPoint:
    """The iterate p = (z, w_1, ..., w_{n-1}).

    The last dual block w_n is never stored; it is derived on demand as
    -sum G_i^* w_i so it can not go stale. For n = 1 `w` is empty and
    w_1 is identically zero.
    """

    z: np.ndarray
    w: Tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'z', as_vector(self.z, 'z'))
        object.__setattr__(
            self,
            'w',
            tuple(
                as_vector(wi, f'w_{i + 1}') for i, wi in enumerate(self.w)
            ),
        )

    @property
    def n_blocks(self) -> int:
        return len(self.w) + 1

    def _check_maps(self, maps: Sequence[LinearMap]):
        if len(maps) != self.n_blocks:
            raise DimensionMismatchError(
                f'Point has {self.n_blocks} blocks but {len(maps)} linear maps were given.'
            )

    def last_dual(self, maps: Sequence[LinearMap]) -> np.ndarray:
        """Derived w_n = -sum_{i<n} G_i^* w_i."""
        self._check_maps(maps)
        w_last = np.zeros_like(self.z)
        for wi, linear_map in zip(self.w, maps[:-1]):
            w_last = w_last - linear_map.apply_adjoint(wi)
        return w_last

    def duals(self, maps: Sequence[LinearMap]) -> List[np.ndarray]:
        """All n dual blocks, including the derived w_n."""
        return list(self.w) + [self.last_dual(maps)]

    def _check_compatible(self, other: 'PrimalDualPoint'):
        if self.z.shape != other.z.shape or len(self.w) != len(other.w):
            raise DimensionMismatchError(
                'Points live in different product spaces.'
            )
        for mine, theirs in zip(self.w, other.w):
            if mine.shape != theirs.shape:
                raise DimensionMismatchError(
                    f'Dual blocks of shapes {mine.shape} and {theirs.shape} do not match.'
                )

    def __add__(self, other: 'PrimalDualPoint') -> 'PrimalDualPoint':
        self._check_compatible(other)
        return PrimalDualPoint(
            self.z + other.z, tuple(a + b for a, b in zip(self.w, other.w))
        )

    def __sub__(self, other: 'PrimalDualPoint') -> 'PrimalDualPoint':
        self._check_compatible(other)
        return PrimalDualPoint(
            self.z - other.z, tuple(a - b for a, b in zip(self.w, other.w))
        )

    def scaled(self, factor: float) -> 'PrimalDualPoint':
        return PrimalDualPoint(
            factor * self.z, tuple(factor * wi for wi in self.w)
        )


def gamma_inner(
    p1: PrimalDualPoint, p2: PrimalDualPoint, metric: GammaMetric
) -> float:
    """gamma*<z1, z2> + sum <w1_i, w2_i>."""
    p1._check_compatible(p2)
    value = metric.gamma * float(p1.z @ p2.z)
    for a, b in zip(p1.w, p2.w):
        value += float(a @ b)
    return value


def gamma_norm_sq(p: PrimalDualPoint, metric: GammaMetric) -> float:
    value = metric.gamma * float(p.z @ p.z)
    for wi in p.w:
        value += float(wi @ wi)
    return value


def gamma_distance_sq(
    p: PrimalDualPoint, q: PrimalDualPoint, metric: GammaMetric
) -> float:
    return gamma_norm_sq(p - q, metric)
