from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.special import expit

from projsplit.constants import LOGISTIC_CLAMP, POWER_ITERATIONS, POWER_TOL
from projsplit.operators.base import (
    ForwardOperator,
    OperatorConfigError,
    operators_logger,
)
from projsplit.spaces import DimensionMismatchError

Matrix = Union[np.ndarray, sparse.spmatrix]


def power_iteration_lambda_max(
    matvec: Union[Matrix, Callable[[np.ndarray], np.ndarray]],
    dim: Optional[int] = None,
    iterations: int = POWER_ITERATIONS,
    tol: float = POWER_TOL,
    seed: int = 0,
) -> float:
    """Estimate the largest eigenvalue of a symmetric PSD operator.

    Args:
        matvec: A square matrix or a callable computing M @ v.
        dim (Optional[int]): Dimension, required when `matvec` is a callable.
        iterations (int): Iteration cap.
        tol (float): Relative change in the Rayleigh quotient at which to stop.
        seed (int): Seed of the random starting vector.

    Returns:
        float: The Rayleigh quotient at the last iterate, a lower estimate of lambda_max.
    """
    if not callable(matvec):
        matrix = matvec
        dim = matrix.shape[0]
        matvec = lambda v: np.asarray(matrix @ v, dtype=np.float64)

    if dim is None:
        raise OperatorConfigError('Power iteration needs the dimension.')

    vector = np.random.default_rng(seed).standard_normal(dim)
    vector /= np.linalg.norm(vector)
    estimate = 0.0

    for _ in range(iterations):
        image = matvec(vector)
        previous, estimate = estimate, float(vector @ image)
        norm = np.linalg.norm(image)
        if norm == 0:
            return 0.0
        vector = image / norm
        if abs(estimate - previous) <= tol * max(abs(estimate), 1e-300):
            break

    return estimate


def grad_quadratic(x: np.ndarray, Q: Matrix) -> np.ndarray:
    """Gradient 2Qx of x'Qx."""
    if Q.shape != (x.shape[0], x.shape[0]):
        raise DimensionMismatchError(
            f'Q of shape {Q.shape} does not match x of shape {x.shape}.'
        )
    return 2.0 * np.asarray(Q @ x, dtype=np.float64)


def quadratic_lipschitz(Q: Matrix) -> float:
    """Cocoercivity constant 2 * lambda_max(Q) of x -> 2Qx."""
    return 2.0 * power_iteration_lambda_max(Q)


def _margins(
    x0: float, x: np.ndarray, data: Matrix, labels: np.ndarray
) -> np.ndarray:
    if data.shape[1] != x.shape[0] or data.shape[0] != labels.shape[0]:
        raise DimensionMismatchError(
            f'Data of shape {data.shape} does not match weights {x.shape} and labels {labels.shape}.'
        )
    return labels * (x0 + np.asarray(data @ x, dtype=np.float64))


def logistic_loss(
    x0: float, x: np.ndarray, data: Matrix, labels: np.ndarray
) -> float:
    """sum_i log(1 + exp(-y_i (x0 + a_i'x)))."""
    return float(np.sum(np.logaddexp(0.0, -_margins(x0, x, data, labels))))


def grad_logistic(
    x0: float, x: np.ndarray, data: Matrix, labels: np.ndarray
) -> Tuple[float, np.ndarray]:
    """Gradient of the logistic loss with respect to (x0, x).

    Margins are clamped to [-LOGISTIC_CLAMP, LOGISTIC_CLAMP] before the
    sigmoid.

    Example:
        >>> import numpy as np
        >>> g0, g = grad_logistic(
        ...     0.0, np.zeros(2), np.eye(2), np.array([1.0, 1.0])
        ... )
        >>> g0
        -1.0
    """
    margins = np.clip(
        _margins(x0, x, data, labels), -LOGISTIC_CLAMP, LOGISTIC_CLAMP
    )
    weights = -labels * expit(-margins)
    return float(np.sum(weights)), np.asarray(
        data.T @ weights, dtype=np.float64
    )


def grad_least_squares(
    z: np.ndarray, design: Matrix, target: np.ndarray
) -> np.ndarray:
    """Gradient D'(Dz - y)/n of (1/2n)||Dz - y||^2."""
    if design.shape != (target.shape[0], z.shape[0]):
        raise DimensionMismatchError(
            f'Design of shape {design.shape} does not match z {z.shape} and target {target.shape}.'
        )
    residual = np.asarray(design @ z, dtype=np.float64) - target
    return np.asarray(design.T @ residual, dtype=np.float64) / target.shape[0]


def _gram_lipschitz(design: Matrix, scale: float) -> float:
    """scale * lambda_max(D'D) without forming D'D."""
    return scale * power_iteration_lambda_max(
        lambda v: np.asarray(design.T @ (design @ v), dtype=np.float64),
        dim=design.shape[1],
    )


def _with_intercept(data: Matrix) -> Matrix:
    ones = np.ones((data.shape[0], 1))
    if sparse.issparse(data):
        return sparse.hstack([sparse.csr_matrix(ones), data], format='csr')
    return np.hstack([ones, data])


class GradKind(str, Enum):
    ZERO = 'zero'
    QUADRATIC = 'quadratic'
    LOGISTIC = 'logistic'
    LEAST_SQUARES = 'least_squares'


@dataclass(frozen=True)
class GradSpec:
    """Description of a forward operator B = grad h.

    Attributes:
        kind (GradKind): Which smooth function h is.
        matrix: Q for quadratic, the data matrix for logistic (intercept
            handled separately as the first coordinate), the design D for
            least squares.
        vector (Optional[np.ndarray]): Labels for logistic, target for least squares.
        lipschitz (Optional[float]): Declared constant L; computed when omitted.
    """

    kind: GradKind
    matrix: Optional[Matrix] = None
    vector: Optional[np.ndarray] = None
    lipschitz: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, 'kind', GradKind(self.kind))

        if self.kind == GradKind.ZERO:
            return

        if self.matrix is None:
            raise OperatorConfigError(
                f'{self.kind.value} gradient needs a matrix.'
            )

        if self.kind == GradKind.QUADRATIC:
            Q = self.matrix
            if Q.shape[0] != Q.shape[1]:
                raise OperatorConfigError(f'Q must be square, got {Q.shape}.')
            dense = Q.toarray() if sparse.issparse(Q) else np.asarray(Q)
            if not np.allclose(dense, dense.T, rtol=1e-12, atol=1e-12):
                raise OperatorConfigError('Q must be symmetric.')
            return

        if self.vector is None:
            raise OperatorConfigError(
                f'{self.kind.value} gradient needs labels or a target vector.'
            )

        if self.kind == GradKind.LOGISTIC and not np.all(
            np.isin(self.vector, (-1.0, 1.0))
        ):
            raise OperatorConfigError('Logistic labels must be +1 or -1.')

    def domain_dim(self) -> Optional[int]:
        if self.kind == GradKind.ZERO:
            return None
        if self.kind == GradKind.LOGISTIC:
            return self.matrix.shape[1] + 1
        return self.matrix.shape[1]

    def gradient(self) -> Callable[[np.ndarray], np.ndarray]:
        if self.kind == GradKind.QUADRATIC:
            return lambda x: grad_quadratic(x, self.matrix)
        if self.kind == GradKind.LOGISTIC:

            def logistic(z: np.ndarray) -> np.ndarray:
                g0, g = grad_logistic(z[0], z[1:], self.matrix, self.vector)
                return np.concatenate(([g0], g))

            return logistic
        return lambda z: grad_least_squares(z, self.matrix, self.vector)

    def estimate_lipschitz(self) -> float:
        if self.kind == GradKind.ZERO:
            return 0.0
        if self.kind == GradKind.QUADRATIC:
            return quadratic_lipschitz(self.matrix)
        if self.kind == GradKind.LOGISTIC:
            return _gram_lipschitz(_with_intercept(self.matrix), 0.25)
        return _gram_lipschitz(self.matrix, 1.0 / self.vector.shape[0])


def forward_from_grad(spec: GradSpec, dim: Optional[int] = None):
    """Build the ForwardOperator for a gradient description.

    The constant L is the declared one when given, otherwise the power
    iteration estimate.
    """
    expected = spec.domain_dim()
    if spec.kind == GradKind.ZERO:
        if dim is None:
            raise OperatorConfigError('Zero gradient needs a dimension.')
        return ForwardOperator.zero(dim)

    if dim is not None and dim != expected:
        raise OperatorConfigError(
            f'{spec.kind.value} gradient acts on dimension {expected}, block has {dim}.'
        )

    lipschitz = spec.lipschitz
    if lipschitz is None:
        lipschitz = spec.estimate_lipschitz()
        operators_logger.debug(
            f'{spec.kind.value} gradient: estimated L={lipschitz:.6e}.'
        )

    return ForwardOperator(
        spec.gradient(),
        dim=expected,
        lipschitz=lipschitz,
        estimator=spec.estimate_lipschitz,
        name=spec.kind.value,
    )
