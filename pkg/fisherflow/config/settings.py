"""
Configuration settings for the solver and the experiment runner.
Numerical defaults live here; per-run choices live in a RunConfig file.
"""

import os
from pathlib import Path

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    print("python-dotenv not installed, skipping .env file loading")

# Base paths
BASE_DIR = Path(__file__).resolve().parent.parent.parent
OUTPUT_DIR = Path(os.environ.get("FISHERFLOW_OUTPUT_DIR", BASE_DIR / "output"))

# Worker pool (cascade levels, sweeps)
MAX_WORKERS = int(os.environ.get("FISHERFLOW_THREADS", 4))

# Mobility maps
F_TABLE_NODES = 2048           # log-spaced nodes of the f / h tables
F_TABLE_MIN = 1e-12            # smallest positive table node (relative to S')
F_TABLE_MAX = 1e3              # largest table node when S is infinite
GAUSS_POINTS = 8               # Gauss-Legendre points per table interval
QUAD_SPLIT_FACTOR = 1e-3       # singular piece of f is [0, 1e-3 * min(z, 1)]
TAYLOR_WINDOW = 1e-6           # regularized m uses its quadratic Taylor polynomial this close to a root
INVERSE_RTOL = 1e-10           # f(g(w)) = w to this relative tolerance
VALIDATION_MESH_SIZE = 10000   # log-spaced sample points for validate()
CONCAVITY_TOL = 1e-9           # m'' above this counts as non-concave
LSC_BOUND = 1e6                # sampled sup|m'| or sup(-m'' m) above this is "unbounded"
MS_SAMPLE_POINTS = (1e-4, 1e-6, 1e-8)

# Functionals
DERIVATIVE_FLOOR = 1e-12       # f'(u) evaluated at u clamped to [eps, S - eps], eps = this * S'

# Transport solver
TRANSPORT_TOL = 1e-6
TRANSPORT_MAX_ITER = 5000
POWER_ITERATIONS = 30          # operator norm estimate for the step sizes
STEP_SAFETY = 0.95             # sigma * tau * |K|^2 = STEP_SAFETY^2
PROX_TOL = 1e-12
PROX_MAX_ITER = 100

# Minimizing-movement scheme
OUTER_TOL = 1e-9
OUTER_MAX_ITER = 20
MAX_HALVINGS = 30
MONOTONICITY_FLOOR = 1e-8      # eps_mono = max(this, 10 * tol_outer) * (1 + F(u0))

# Oracle integrator
ORACLE_FLOOR_FACTOR = 1e-3     # rho_floor = this * U / L
ORACLE_NEWTON_TOL = 1e-10
ORACLE_MAX_NEWTON = 50

# Regularization cascade
CASCADE_LEVELS = 5
CASCADE_CONDITIONING = 1e-3    # m_delta_bar >= this * max m at the mean density
NEAR_INADMISSIBLE_ENERGY = 1e6

# Output schema tags
CSV_SCHEMA = "fisherflow-run/1"
CASCADE_SCHEMA = "fisherflow-cascade/1"
MANIFEST_SCHEMA = "fisherflow-manifest/1"
FLOAT_FORMAT = "%.17g"
