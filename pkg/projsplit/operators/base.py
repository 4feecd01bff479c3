import logging
from typing import Callable, Optional, Tuple

import numpy as np

from projsplit.spaces import DimensionMismatchError

operators_logger = logging.getLogger('Operator Library')


class OperatorConfigError(Exception):
    """Exception raised for invalid operator parameters."""

    pass


class Resolvent:
    """Backward step x = J_{rho A}(t) together with a = (t - x) / rho.

    Attributes:
        prox (Callable[[np.ndarray, float], np.ndarray]): Computes J_{rho A}(t).
        name (str): Label used in logs and reports.
        evaluations (int): Number of calls since construction or the last reset.
    """

    def __init__(
        self,
        prox: Callable[[np.ndarray, float], np.ndarray],
        name: str = 'resolvent',
    ):
        self.prox = prox
        self.name = name
        self.evaluations = 0

    @classmethod
    def identity(cls) -> 'Resolvent':
        """Resolvent of A = 0."""
        return cls(lambda t, rho: t, name='zero')

    def __call__(
        self, t: np.ndarray, rho: float, counted: bool = True
    ) -> Tuple[np.ndarray, np.ndarray]:
        if not rho > 0:
            raise OperatorConfigError(
                f'Resolvent {self.name} needs rho > 0, got {rho}.'
            )

        x = np.asarray(self.prox(t, rho), dtype=np.float64)
        if x.shape != t.shape:
            raise DimensionMismatchError(
                f'Resolvent {self.name} returned shape {x.shape} for input {t.shape}.'
            )

        if counted:
            self.evaluations += 1
        return x, (t - x) / rho

    def reset_counter(self):
        self.evaluations = 0

    def __repr__(self) -> str:
        return f'Resolvent(name={self.name!r})'


class ForwardOperator:
    """Single-valued forward map x -> Bx with an evaluation counter.

    Attributes:
        func (Callable[[np.ndarray], np.ndarray]): The map itself.
        dim (int): Dimension of its domain and range.
        lipschitz (Optional[float]): Declared constant L; cocoercivity or
            Lipschitz constant depending on the block scheme. Zero for
            constant maps.
        constant (bool): Whether Bx is the same vector for every x.
        estimator (Optional[Callable[[], float]]): Numerical estimate of L
            used to cross-check declared constants.
        name (str): Label used in logs and reports.
    """

    def __init__(
        self,
        func: Callable[[np.ndarray], np.ndarray],
        dim: int,
        lipschitz: Optional[float] = None,
        constant: bool = False,
        estimator: Optional[Callable[[], float]] = None,
        name: str = 'forward',
    ):
        if dim < 1:
            raise OperatorConfigError(
                f'Forward operator {name} needs a positive dimension.'
            )

        if constant:
            lipschitz = 0.0

        if lipschitz is not None and (
            not np.isfinite(lipschitz) or lipschitz < 0
        ):
            raise OperatorConfigError(
                f'Forward operator {name} has invalid constant L={lipschitz}.'
            )

        self.func = func
        self.dim = int(dim)
        self.lipschitz = None if lipschitz is None else float(lipschitz)
        self.constant = constant
        self.estimator = estimator
        self.name = name
        self.evaluations = 0

    @classmethod
    def zero(cls, dim: int) -> 'ForwardOperator':
        return cls.constant_map(np.zeros(dim), name='zero')

    @classmethod
    def constant_map(
        cls, value: np.ndarray, name: str = 'constant'
    ) -> 'ForwardOperator':
        value = np.array(value, dtype=np.float64)
        value.flags.writeable = False
        return cls(
            lambda x: value,
            dim=value.shape[0],
            constant=True,
            name=name,
        )

    def __call__(self, x: np.ndarray, counted: bool = True) -> np.ndarray:
        if x.shape != (self.dim,):
            raise DimensionMismatchError(
                f'Forward operator {self.name} expects shape ({self.dim},), got {x.shape}.'
            )
        if counted:
            self.evaluations += 1
        return np.asarray(self.func(x), dtype=np.float64)

    def estimate_lipschitz(self) -> Optional[float]:
        if self.constant:
            return 0.0
        if self.estimator is None:
            return None
        return float(self.estimator())

    def reset_counter(self):
        self.evaluations = 0

    def __repr__(self) -> str:
        return (
            f'ForwardOperator(name={self.name!r}, dim={self.dim}, '
            f'lipschitz={self.lipschitz}, constant={self.constant})'
        )
