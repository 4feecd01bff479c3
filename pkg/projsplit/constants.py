DEFAULT_PI_TOL = 1e-24
DEFAULT_RESIDUAL_TOL = 1e-8
DEFAULT_IDENTITY_TOL = 1e-10
DEFAULT_MAX_ITERS = 1000
DEFAULT_BETA = 1.0

BACKTRACK_MAX_INNER = 100
BACKTRACK_DELTA = 0.7
BACKTRACK_GROWTH = 1.1
ETA_DENOMINATOR_FLOOR = 1e-24
ASCENT_SLACK = 1e-8

POWER_ITERATIONS = 100
POWER_TOL = 1e-8
LOGISTIC_CLAMP = 30.0

# dual scaling gamma per delta_r for the one-forward-step method
PORTFOLIO_GAMMA = {
    0.5: 0.01,
    0.8: 0.01,
    1.0: 0.5,
    1.5: 5.0,
}
# dual scaling gamma per lambda
GROUP_LOGISTIC_GAMMA = {
    0.05: 0.05,
    0.5: 100.0,
    0.85: 100.0,
}
RARE_FEATURE_GAMMA = {
    1e-5: 1.0,
    1e-2: 10.0,
    1e-1: 1e4,
}

PORTFOLIO_ENUMERATION_MAX_DIM = 8
REFERENCE_TOL = 1e-12
REFERENCE_CERT_TOL = 1e-9
REFERENCE_MAX_ITERS = 200000

TRACE_COLUMNS = [
    'iter',
    'phi',
    'pi',
    'tau',
    'res_primal',
    'res_dual',
    'obj',
    'fwd_evals',
    'elapsed_s',
]
SEED_ENV_VAR = 'PROJSPLIT_SEED'

EXIT_OK = 0
EXIT_PROPERTY_VIOLATED = 1
EXIT_CONFIG_ERROR = 2
EXIT_SOLVER_ERROR = 3
