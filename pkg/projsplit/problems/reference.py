import logging
from dataclasses import dataclass
from functools import singledispatch
from typing import Callable

import numpy as np

from projsplit.constants import (
    REFERENCE_CERT_TOL,
    REFERENCE_MAX_ITERS,
    REFERENCE_TOL,
)
from projsplit.problems.base import ReferenceSolution, ReferenceSolveError

reference_logger = logging.getLogger('Reference Solver')

# float64 rounding allowance in the sufficient-decrease test
_DECREASE_ROUNDING = 1e-15


@dataclass(frozen=True)
class ProxGradResult:
    x: np.ndarray
    residual: float
    iterations: int
    stepsize: float


def accelerated_proximal_gradient(
    smooth: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    prox: Callable[[np.ndarray, float], np.ndarray],
    x0: np.ndarray,
    stepsize: float = 1.0,
    tol: float = REFERENCE_TOL,
    max_iters: int = REFERENCE_MAX_ITERS,
    shrink: float = 0.5,
) -> ProxGradResult:
    """Minimize smooth(x) + g(x) by accelerated proximal gradient.

    The stepsize backtracks on the sufficient-decrease test and momentum
    restarts whenever the step turns against the previous direction. The
    stopping residual is the norm of

        (w - x+)/s - grad(w) + grad(x+),

    an element of the subdifferential of the full objective at x+.

    Args:
        smooth (Callable[[np.ndarray], float]): Differentiable part.
        grad (Callable[[np.ndarray], np.ndarray]): Its gradient.
        prox (Callable[[np.ndarray, float], np.ndarray]): prox of s*g.
        x0 (np.ndarray): Starting point.
        stepsize (float): Initial stepsize, ideally 1/L.
        tol (float): Residual tolerance, relative to max(1, ||grad(x+)||).
        max_iters (int): Iteration cap.
        shrink (float): Backtracking factor.

    Returns:
        ProxGradResult: Last iterate, its residual and the iteration count.
    """
    x = np.array(x0, dtype=np.float64)
    x_old = x
    t_old = 1.0
    residual = float('inf')

    for iteration in range(1, max_iters + 1):
        t = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_old**2))
        w = x + ((t_old - 1.0) / t) * (x - x_old)
        smooth_w = smooth(w)
        grad_w = grad(w)

        while True:
            x_new = prox(w - stepsize * grad_w, stepsize)
            step = x_new - w
            bound = (
                smooth_w
                + float(step @ grad_w)
                + float(step @ step) / (2 * stepsize)
            )
            if smooth(x_new) <= bound + _DECREASE_ROUNDING * max(
                1.0, abs(smooth_w)
            ):
                break
            stepsize *= shrink

        grad_new = grad(x_new)
        subgradient = -step / stepsize - grad_w + grad_new
        residual = float(np.linalg.norm(subgradient))

        if float((w - x_new) @ (x_new - x)) > 0:
            t = 1.0

        x_old, x, t_old = x, x_new, t

        if not np.all(np.isfinite(x)):
            raise ReferenceSolveError(
                f'Proximal gradient diverged at iteration {iteration}.'
            )

        if residual <= tol * max(1.0, float(np.linalg.norm(grad_new))):
            return ProxGradResult(x, residual, iteration, stepsize)

    return ProxGradResult(x, residual, max_iters, stepsize)


def certify(
    solution: ReferenceSolution, threshold: float = REFERENCE_CERT_TOL
) -> ReferenceSolution:
    """Accept a reference only when its KKT residual is at most `threshold`.

    Raises:
        ReferenceSolveError: If the objective is not finite or the residual
            exceeds `threshold`.
    """
    if not np.isfinite(solution.objective):
        raise ReferenceSolveError(
            f'{solution.method} returned a non-finite objective.'
        )

    if solution.kkt_residual > threshold:
        reference_logger.error(
            f'{solution.method}: KKT residual {solution.kkt_residual:.3e} above {threshold:.1e}.'
        )
        raise ReferenceSolveError(
            f'{solution.method} could not certify its solution: KKT residual {solution.kkt_residual:.3e} above {threshold:.1e}.'
        )

    reference_logger.info(
        f'{solution.method}: F*={solution.objective:.12e}, KKT residual {solution.kkt_residual:.3e}.'
    )
    return solution


@singledispatch
def reference_solve(instance) -> ReferenceSolution:
    """High-accuracy solution of a generated instance.

    Each problem family registers its own oracle.

    Raises:
        ReferenceSolveError: If no oracle exists for the instance type or
            the oracle fails.
    """
    raise ReferenceSolveError(
        f'No reference oracle registered for {type(instance).__name__}.'
    )
