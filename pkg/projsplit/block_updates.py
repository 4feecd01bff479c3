import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from projsplit.constants import (
    ASCENT_SLACK,
    BACKTRACK_DELTA,
    BACKTRACK_GROWTH,
    BACKTRACK_MAX_INNER,
    ETA_DENOMINATOR_FLOOR,
    POWER_TOL,
)
from projsplit.operators.base import ForwardOperator, Resolvent
from projsplit.spaces import LinearMap

block_updates_logger = logging.getLogger('Block Updates')

# relative rounding allowance on the backtracking acceptance tests
ACCEPTANCE_ROUNDING = 1e-12


class BlockConfigError(Exception):
    """Exception raised when block stepsize or relaxation parameters are invalid."""

    pass


class BacktrackingError(Exception):
    """Exception raised when the backtracking linesearch does not accept a stepsize."""

    pass


class BlockOperators(NamedTuple):
    resolvent: Resolvent
    forward: ForwardOperator
    linear_map: LinearMap


@dataclass(frozen=True)
class BlockState:
    """Running state of one block.

    Attributes:
        x (np.ndarray): Primal point x_i.
        y (np.ndarray): y_i = a + Bx_i, a point of (A_i + B_i)x_i.
        b (np.ndarray): Cached forward value Bx_i.
        y_hat (np.ndarray): a + B applied at the previous x.
        rho (float): Stepsize the state was produced with.
        eta (float): Squared-ratio factor that widens the next trial interval.
        t (Optional[np.ndarray]): Resolvent argument of the producing update.
        trials (int): Inner trials of the producing update.
        forward_evals (int): Evaluations of B spent by the producing update.
    """

    x: np.ndarray
    y: np.ndarray
    b: np.ndarray
    y_hat: np.ndarray
    rho: float
    eta: float = 0.0
    t: Optional[np.ndarray] = None
    trials: int = 0
    forward_evals: int = 0

    def membership_residual(self) -> float:
        """||y - (t - x)/rho - b||, zero when y is certified to lie in Ax + Bx."""
        if self.t is None:
            return float('nan')
        return float(
            np.linalg.norm(self.y - (self.t - self.x) / self.rho - self.b)
        )


@dataclass(frozen=True)
class OneStepParams:
    """Averaging weight and stepsize of the one-forward-step map.

    The map itself accepts alpha = 0 (forward-backward); solver blocks need
    alpha in (0, 1], checked by `validate_for`.
    """

    alpha: float
    rho: float

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise BlockConfigError(
                f'alpha must lie in [0, 1], got {self.alpha}.'
            )
        if not self.rho > 0:
            raise BlockConfigError(f'rho must be positive, got {self.rho}.')

    def validate_for(self, forward: ForwardOperator):
        """Check the fixed-stepsize conditions against the block's forward map.

        Raises:
            BlockConfigError: If alpha is 0, if L > 0 with alpha = 1 or
                rho > 2(1 - alpha)/L, if L is unknown for a non-constant
                map, or if the declared L is below its numerical estimate.
        """
        if self.alpha == 0:
            raise BlockConfigError('Solver blocks need alpha > 0.')

        if forward.constant:
            return

        lipschitz = forward.lipschitz
        if lipschitz is None:
            raise BlockConfigError(
                f'Fixed stepsize on {forward.name} needs a declared constant L.'
            )

        estimate = forward.estimate_lipschitz()
        if estimate is not None and lipschitz < estimate * (1 - POWER_TOL):
            raise BlockConfigError(
                f'Declared L={lipschitz:.6e} for {forward.name} is below the estimate {estimate:.6e}.'
            )

        if lipschitz > 0:
            if self.alpha >= 1:
                raise BlockConfigError(
                    'alpha must be strictly below 1 when L > 0.'
                )
            bound = 2 * (1 - self.alpha) / lipschitz
            if self.rho > bound:
                raise BlockConfigError(
                    f'rho={self.rho} exceeds 2(1 - alpha)/L = {bound:.6e}.'
                )


class TrialRule(str, Enum):
    UPPER = 'upper'
    PREVIOUS = 'previous'
    GROW = 'grow'


@dataclass(frozen=True)
class BacktrackConfig:
    """Parameters of the backtracking linesearch.

    Attributes:
        delta (float): Decrease factor in (0, 1).
        rho_hat (float): Global stepsize cap.
        rho0 (float): Initial stepsize.
        theta_hat (Optional[np.ndarray]): Anchor point in dom(A).
        w_hat (Optional[np.ndarray]): Element of A(theta_hat) + B(theta_hat).
        trial_rule (TrialRule): How the first trial stepsize is picked.
        max_inner (int): Inner trial cap.
        growth (float): Factor of the `grow` trial rule.
        ascent_margin (float): Margin Delta of the two-forward-step test
            <Gz - x, y - w> >= Delta ||Gz - x||^2.
    """

    delta: float = BACKTRACK_DELTA
    rho_hat: float = float('inf')
    rho0: float = 1.0
    theta_hat: Optional[np.ndarray] = None
    w_hat: Optional[np.ndarray] = None
    trial_rule: TrialRule = TrialRule.UPPER
    max_inner: int = BACKTRACK_MAX_INNER
    growth: float = BACKTRACK_GROWTH
    ascent_margin: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'trial_rule', TrialRule(self.trial_rule))

        if not 0 < self.delta < 1:
            raise BlockConfigError(
                f'delta must lie in (0, 1), got {self.delta}.'
            )
        if not self.rho0 > 0:
            raise BlockConfigError(f'rho0 must be positive, got {self.rho0}.')
        if not self.rho_hat >= self.rho0:
            raise BlockConfigError(
                f'rho_hat={self.rho_hat} must be at least rho0={self.rho0}.'
            )
        if self.max_inner < 1:
            raise BlockConfigError('max_inner must be at least 1.')
        if self.growth < 1:
            raise BlockConfigError(
                f'growth must be at least 1, got {self.growth}.'
            )
        if not self.ascent_margin > 0:
            raise BlockConfigError('ascent_margin must be positive.')

    def with_certificate(
        self, theta_hat: np.ndarray, w_hat: np.ndarray
    ) -> 'BacktrackConfig':
        return replace(self, theta_hat=theta_hat, w_hat=w_hat)


@dataclass(frozen=True)
class CheckReport:
    """Outcome of an inequality check; slack is the margin by which it holds."""

    holds: bool
    slack: float
    scale: float = 1.0

    def __bool__(self) -> bool:
        return self.holds


def seed_state(
    x0: np.ndarray,
    ops: BlockOperators,
    rho: float,
    y0: Optional[np.ndarray] = None,
) -> BlockState:
    """Initial block state with b = Bx and y in Ax + Bx.

    When y0 is given it is trusted as an element of (A + B)x0. Otherwise
    x0 is replaced by x' = J(x0 - rho Bx0) and y0 = (x0 - rho Bx0 - x')/rho + Bx'.
    """
    b0 = ops.forward(x0)
    if y0 is not None:
        t = x0 + rho * (y0 - b0)
        return BlockState(x=x0, y=y0, b=b0, y_hat=y0, rho=rho, t=t)

    t = x0 - rho * b0
    x_seed, a = ops.resolvent(t, rho)
    b_seed = ops.forward(x_seed)
    y_seed = a + b_seed
    return BlockState(
        x=x_seed, y=y_seed, b=b_seed, y_hat=a + b0, rho=rho, t=t
    )


def _one_step_from_gz(
    gz: np.ndarray,
    state: BlockState,
    w: np.ndarray,
    alpha: float,
    rho: float,
    ops: BlockOperators,
) -> BlockState:
    t = (1 - alpha) * state.x + alpha * gz - rho * (state.b - w)
    x_new, a = ops.resolvent(t, rho)
    b_new = ops.forward(x_new)
    return BlockState(
        x=x_new,
        y=a + b_new,
        b=b_new,
        y_hat=a + state.b,
        rho=rho,
        eta=state.eta,
        t=t,
        trials=1,
        forward_evals=1,
    )


def one_forward_step(
    z: np.ndarray,
    state: BlockState,
    w: np.ndarray,
    params: OneStepParams,
    ops: BlockOperators,
) -> BlockState:
    """Apply the one-forward-step map at stepsize params.rho.

    t = (1 - alpha)x + alpha Gz - rho(b - w), x+ = J_{rho A}(t),
    y+ = (t - x+)/rho + Bx+. The cached b = Bx is reused, so exactly one
    new evaluation of B happens.

    Args:
        z (np.ndarray): Primal coordinate z.
        state (BlockState): Previous state, with state.b = B(state.x).
        w (np.ndarray): Dual coordinate w_i.
        params (OneStepParams): alpha in [0, 1] and rho > 0.
        ops (BlockOperators): Resolvent, forward map and linear map of the block.

    Returns:
        BlockState: The new state.

    Example:
        >>> import numpy as np
        >>> from projsplit.operators.base import ForwardOperator, Resolvent
        >>> from projsplit.spaces import LinearMap
        >>> ops = BlockOperators(
        ...     Resolvent.identity(), ForwardOperator.zero(1), LinearMap.identity(1)
        ... )
        >>> start = BlockState(
        ...     x=np.array([0.5]), y=np.zeros(1), b=np.zeros(1),
        ...     y_hat=np.zeros(1), rho=2.0,
        ... )
        >>> new = one_forward_step(
        ...     np.ones(1), start, np.array([0.25]), OneStepParams(1.0, 2.0), ops
        ... )
        >>> new.x.tolist(), new.y.tolist()
        ([1.5], [0.0])
    """
    gz = ops.linear_map.apply(z)
    return _one_step_from_gz(gz, state, w, params.alpha, params.rho, ops)


def validate_lipschitz_step(rho: float, forward: ForwardOperator):
    if not rho > 0:
        raise BlockConfigError(f'rho must be positive, got {rho}.')
    if forward.lipschitz and rho * forward.lipschitz >= 1:
        raise BlockConfigError(
            f'Two-forward-step needs rho < 1/L = {1 / forward.lipschitz:.6e}, got {rho}.'
        )


def _two_step_from(
    gz: np.ndarray,
    bgz: np.ndarray,
    w: np.ndarray,
    rho: float,
    ops: BlockOperators,
) -> BlockState:
    t = gz - rho * (bgz - w)
    x, a = ops.resolvent(t, rho)
    b = ops.forward(x)
    return BlockState(
        x=x,
        y=a + b,
        b=b,
        y_hat=a + bgz,
        rho=rho,
        t=t,
        trials=1,
        forward_evals=1,
    )


def two_forward_step(
    z: np.ndarray, w: np.ndarray, rho: float, ops: BlockOperators
) -> BlockState:
    """Two-forward-step update for a merely Lipschitz B.

    t = Gz - rho(B(Gz) - w), x = J_{rho A}(t), y = (t - x)/rho + Bx, with B
    evaluated at Gz and at x.

    Raises:
        BlockConfigError: If rho >= 1/L for a declared L.
    """
    validate_lipschitz_step(rho, ops.forward)
    gz = ops.linear_map.apply(z)
    bgz = ops.forward(gz)
    state = _two_step_from(gz, bgz, w, rho, ops)
    return replace(state, forward_evals=2)


def ascent_check(
    prev_phi: float,
    state_old: BlockState,
    state_new: BlockState,
    gz: np.ndarray,
    w: np.ndarray,
    alpha: float,
    rho: float,
    tol: float = ASCENT_SLACK,
) -> CheckReport:
    """Check the one-step ascent inequality

    phi+ >= (rho/2alpha)(||y+ - w||^2 + alpha||y_hat - w||^2)
            + (1 - alpha)(phi - (rho/2alpha)||y - w||^2)

    with phi+ = <Gz - x+, y+ - w>, y the old and y+ the new block dual.

    Returns:
        CheckReport: `slack` is the left side minus the right side; the
            check holds when it is at least -tol.
    """
    if not 0 < alpha <= 1:
        raise BlockConfigError(
            f'The ascent inequality needs alpha in (0, 1], got {alpha}.'
        )

    weight = rho / (2 * alpha)
    phi_plus = float((gz - state_new.x) @ (state_new.y - w))
    new_gap = float(np.sum((state_new.y - w) ** 2))
    hat_gap = float(np.sum((state_new.y_hat - w) ** 2))
    old_gap = float(np.sum((state_old.y - w) ** 2))
    rhs = weight * (new_gap + alpha * hat_gap) + (1 - alpha) * (
        prev_phi - weight * old_gap
    )
    slack = phi_plus - rhs
    return CheckReport(
        holds=slack >= -tol,
        slack=slack,
        scale=max(1.0, abs(phi_plus), abs(rhs)),
    )


def contractive_check(
    state_new: BlockState,
    state_old: BlockState,
    gz: np.ndarray,
    w: np.ndarray,
    alpha: float,
    rho: float,
    theta_hat: np.ndarray,
    w_hat: np.ndarray,
    tol: float = ASCENT_SLACK,
) -> CheckReport:
    """Check ||x+ - th|| <= (1 - alpha)||x - th|| + alpha||Gz - th|| + rho||w - w_hat||."""
    lhs = float(np.linalg.norm(state_new.x - theta_hat))
    rhs = (
        (1 - alpha) * float(np.linalg.norm(state_old.x - theta_hat))
        + alpha * float(np.linalg.norm(gz - theta_hat))
        + rho * float(np.linalg.norm(w - w_hat))
    )
    slack = rhs - lhs
    return CheckReport(
        holds=slack >= -tol, slack=slack, scale=max(1.0, lhs, rhs)
    )


def trial_interval(state: BlockState, cfg: BacktrackConfig, alpha: float):
    """Allowed range [rho_prev, min((1 + alpha eta) rho_prev, rho_hat)] of the first trial."""
    upper = min((1 + alpha * state.eta) * state.rho, cfg.rho_hat)
    return state.rho, upper


def _first_trial(state: BlockState, cfg: BacktrackConfig, alpha: float):
    lower, upper = trial_interval(state, cfg, alpha)
    if cfg.trial_rule == TrialRule.UPPER:
        return upper
    if cfg.trial_rule == TrialRule.PREVIOUS:
        return lower
    return min(cfg.growth * lower, upper)


def _check_certificate(cfg: BacktrackConfig):
    if cfg.theta_hat is None or cfg.w_hat is None:
        raise BlockConfigError(
            'Backtracking needs theta_hat and w_hat; use with_certificate.'
        )


def backtrack(
    z: np.ndarray,
    state: BlockState,
    w: np.ndarray,
    cfg: BacktrackConfig,
    alpha: float,
    ops: BlockOperators,
) -> BlockState:
    """One-forward-step update with a backtracking stepsize.

    Trials start inside [rho_prev, min((1 + alpha eta)rho_prev, rho_hat)]
    and shrink by delta until the contractive bound and the ascent
    inequality both hold. On acceptance eta is set to
    ||y_hat - w||^2 / ||y - w||^2, or to 0 when the denominator is below
    1e-24.

    Args:
        z (np.ndarray): Primal coordinate z.
        state (BlockState): Previous state of the block.
        w (np.ndarray): Dual coordinate w_i.
        cfg (BacktrackConfig): Linesearch parameters, with the certificate set.
        alpha (float): Averaging weight in (0, 1].
        ops (BlockOperators): Block operators.

    Returns:
        BlockState: The accepted state; `trials` counts inner iterations.

    Raises:
        BacktrackingError: If no trial is accepted within cfg.max_inner.
    """
    _check_certificate(cfg)
    if not 0 < alpha <= 1:
        raise BlockConfigError(
            f'Backtracking blocks need alpha in (0, 1], got {alpha}.'
        )

    gz = ops.linear_map.apply(z)
    phi = float((gz - state.x) @ (state.y - w))
    blend = (1 - alpha) * state.x + alpha * gz
    rho_trial = _first_trial(state, cfg, alpha)

    for trial in range(1, cfg.max_inner + 1):
        candidate = _one_step_from_gz(gz, state, w, alpha, rho_trial, ops)
        y_hat = (blend - candidate.x) / rho_trial + w
        candidate = replace(candidate, y_hat=y_hat)

        contractive = contractive_check(
            candidate,
            state,
            gz,
            w,
            alpha,
            rho_trial,
            cfg.theta_hat,
            cfg.w_hat,
            tol=0.0,
        )
        if contractive.slack >= -ACCEPTANCE_ROUNDING * contractive.scale:
            ascent = ascent_check(
                phi, state, candidate, gz, w, alpha, rho_trial, tol=0.0
            )
            if ascent.slack >= -ACCEPTANCE_ROUNDING * max(
                ascent.scale, abs(phi)
            ):
                numerator = float(np.sum((y_hat - w) ** 2))
                denominator = float(np.sum((candidate.y - w) ** 2))
                eta = (
                    numerator / denominator
                    if denominator >= ETA_DENOMINATOR_FLOOR
                    else 0.0
                )
                return replace(
                    candidate, eta=eta, trials=trial, forward_evals=trial
                )

        rho_trial *= cfg.delta

    block_updates_logger.error(
        f'No stepsize accepted after {cfg.max_inner} trials (last rho={rho_trial / cfg.delta:.3e}).'
    )
    raise BacktrackingError(
        f'Backtracking exceeded {cfg.max_inner} trials; the forward map may not be '
        f'cocoercive or (theta_hat, w_hat) may not be a valid graph point.'
    )


def two_step_backtrack(
    z: np.ndarray,
    state: BlockState,
    w: np.ndarray,
    cfg: BacktrackConfig,
    ops: BlockOperators,
) -> BlockState:
    """Two-forward-step update with a backtracking stepsize.

    B(Gz) is evaluated once; each trial costs one more evaluation at the
    new x. A trial is accepted when <Gz - x, y - w> >= Delta ||Gz - x||^2.
    The first trial is the previous stepsize, grown by `growth` under the
    grow rule and set to rho_hat under the upper rule when rho_hat is finite.
    """
    gz = ops.linear_map.apply(z)
    bgz = ops.forward(gz)

    if cfg.trial_rule == TrialRule.GROW:
        rho_trial = min(cfg.growth * state.rho, cfg.rho_hat)
    elif cfg.trial_rule == TrialRule.UPPER and np.isfinite(cfg.rho_hat):
        rho_trial = cfg.rho_hat
    else:
        rho_trial = state.rho

    for trial in range(1, cfg.max_inner + 1):
        candidate = _two_step_from(gz, bgz, w, rho_trial, ops)
        gap = gz - candidate.x
        lhs = float(gap @ (candidate.y - w))
        rhs = cfg.ascent_margin * float(gap @ gap)
        if lhs >= rhs - ACCEPTANCE_ROUNDING * max(1.0, abs(lhs), rhs):
            return replace(candidate, trials=trial, forward_evals=trial + 1)
        rho_trial *= cfg.delta

    block_updates_logger.error(
        f'Two-forward-step backtracking gave up after {cfg.max_inner} trials.'
    )
    raise BacktrackingError(
        f'Two-forward-step backtracking exceeded {cfg.max_inner} trials; '
        f'the forward map may not be Lipschitz continuous.'
    )
