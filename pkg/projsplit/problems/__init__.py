from projsplit.problems import group_logistic, lasso, portfolio, rare_features
from projsplit.problems.reference import reference_solve

__all__ = [
    'group_logistic',
    'lasso',
    'portfolio',
    'rare_features',
    'reference_solve',
]
