import os
from pathlib import Path
from typing import Any, Callable, Dict, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from projsplit.block_updates import TrialRule
from projsplit.constants import (
    BACKTRACK_DELTA,
    DEFAULT_BETA,
    DEFAULT_MAX_ITERS,
    DEFAULT_PI_TOL,
    DEFAULT_RESIDUAL_TOL,
    SEED_ENV_VAR,
)
from projsplit.problems.base import ExperimentSetup
from projsplit.problems.group_logistic import (
    gen_group_logistic,
    group_logistic_objective,
    group_logistic_setup,
)
from projsplit.problems.lasso import gen_lasso, lasso_objective, lasso_setup
from projsplit.problems.portfolio import (
    gen_portfolio,
    portfolio_objective,
    portfolio_setup,
)
from projsplit.problems.rare_features import (
    gen_rare_features,
    rare_feature_objective,
    rare_features_setup,
)
from projsplit.solver import BlockScheme, SolveOptions


class RunConfigError(Exception):
    """Exception raised when a run configuration can not be loaded or used."""

    pass


ProblemName = Literal['portfolio', 'group_logistic', 'rare_features', 'lasso']

# generator parameters each problem needs
REQUIRED_PARAMS: Dict[str, tuple] = {
    'portfolio': ('d', 'delta_r'),
    'group_logistic': ('n', 'd', 'lam'),
    'rare_features': ('n', 'lam'),
    'lasso': ('n', 'd', 'lam'),
}

OBJECTIVES: Dict[str, Callable[[np.ndarray, Any], float]] = {
    'portfolio': portfolio_objective,
    'group_logistic': group_logistic_objective,
    'rare_features': rare_feature_objective,
    'lasso': lasso_objective,
}

SETUPS: Dict[str, Callable[..., ExperimentSetup]] = {
    'portfolio': portfolio_setup,
    'group_logistic': group_logistic_setup,
    'rare_features': rare_features_setup,
    'lasso': lasso_setup,
}


class RunConfig(BaseModel):
    """Everything a CLI run needs: the instance, the solver settings and outputs.

    A problem-spec document is this model serialized as JSON.
    """

    model_config = ConfigDict(extra='forbid')

    problem: ProblemName
    seed: Optional[int] = None

    # instance
    d: Optional[int] = Field(default=None, ge=1)
    n: Optional[int] = Field(default=None, ge=1)
    delta_r: Optional[float] = Field(default=None, gt=0)
    lam: Optional[float] = Field(default=None, ge=0)
    mu: float = Field(default=0.5, ge=0, le=1)
    leaves: int = Field(default=32, ge=1)
    depth: int = Field(default=5, ge=1)
    n_groups: int = Field(default=20, ge=1)

    # solver
    gamma: Optional[float] = Field(default=None, gt=0)
    beta: float = Field(default=DEFAULT_BETA, gt=0, lt=2)
    scheme: BlockScheme = BlockScheme.ONE_STEP_BACKTRACK
    alpha: Optional[float] = Field(default=None, gt=0, le=1)
    rho: Optional[float] = Field(default=None, gt=0)
    delta: float = Field(default=BACKTRACK_DELTA, gt=0, lt=1)
    rho_hat: Optional[float] = Field(default=None, gt=0)
    trial_rule: Optional[TrialRule] = None
    max_iters: int = Field(default=DEFAULT_MAX_ITERS, ge=1)
    residual_tol: float = Field(default=DEFAULT_RESIDUAL_TOL, gt=0)
    pi_tol: float = Field(default=DEFAULT_PI_TOL, gt=0)
    trace_every: int = Field(default=1, ge=1)

    # outputs
    out_dir: Path = Path('projsplit-out')
    trace_format: Literal['csv', 'json'] = 'csv'

    @model_validator(mode='before')
    @classmethod
    def seed_from_environment(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get('seed') is None:
            raw = os.environ.get(SEED_ENV_VAR)
            if raw:
                try:
                    data = {**data, 'seed': int(raw)}
                except ValueError as e:
                    raise ValueError(
                        f'{SEED_ENV_VAR} must be an integer, got {raw!r}.'
                    ) from e
        return data

    @model_validator(mode='after')
    def check_required_params(self) -> 'RunConfig':
        missing = [
            name
            for name in REQUIRED_PARAMS[self.problem]
            if getattr(self, name) is None
        ]
        if missing:
            raise ValueError(
                f'Problem {self.problem} requires: {", ".join(missing)}.'
            )
        return self

    def setup_options(self) -> Dict[str, Any]:
        options: Dict[str, Any] = {
            'scheme': self.scheme,
            'beta': self.beta,
            'delta': self.delta,
        }
        for name in ('gamma', 'alpha', 'rho', 'rho_hat', 'trial_rule'):
            value = getattr(self, name)
            if value is not None:
                options[name] = value
        return options

    def build_setup(self) -> ExperimentSetup:
        """Generate the instance and its block splitting."""
        options = self.setup_options()
        if self.problem == 'portfolio':
            return gen_portfolio(self.d, self.delta_r, self.seed, **options)
        if self.problem == 'group_logistic':
            return gen_group_logistic(
                self.n,
                self.d,
                self.lam,
                self.seed,
                n_groups=min(self.n_groups, self.d),
                **options,
            )
        if self.problem == 'rare_features':
            return gen_rare_features(
                self.n,
                leaves=self.leaves,
                depth=self.depth,
                lam=self.lam,
                mu=self.mu,
                seed=self.seed,
                **options,
            )
        return gen_lasso(self.n, self.d, self.lam, self.seed, **options)

    def setup_for(self, instance, **overrides) -> ExperimentSetup:
        """Split an existing instance again, e.g. under another block scheme."""
        options = {**self.setup_options(), **overrides}
        return SETUPS[self.problem](instance, **options)

    def objective(self, instance) -> Callable[[np.ndarray], float]:
        function = OBJECTIVES[self.problem]
        return lambda z: function(z, instance)

    def solve_options(self, instance=None, **overrides) -> SolveOptions:
        settings = {
            'max_iters': self.max_iters,
            'residual_tol': self.residual_tol,
            'pi_tol': self.pi_tol,
            'trace_every': self.trace_every,
        }
        if instance is not None:
            settings['objective'] = self.objective(instance)
        settings.update(overrides)
        return SolveOptions(**settings)


def load_run_config(path: Path) -> RunConfig:
    """Read a problem-spec JSON document.

    Raises:
        RunConfigError: If the file can not be read.
        pydantic.ValidationError: If its content is not a valid RunConfig.
    """
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise RunConfigError(f'Can not read run config {path}: {e}') from e
    return RunConfig.model_validate_json(text)


def save_run_config(config: RunConfig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config.model_dump_json(indent=2))
    return path
