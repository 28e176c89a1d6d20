import os
from dotenv import load_dotenv

load_dotenv()

OUTPUT_DIR = os.getenv("QBM_OUTPUT_DIR", "qbm_output")

# Run registry. Empty string disables it.
DATABASE_URL = os.getenv("QBM_DATABASE_URL", "sqlite:///qbm_runs.db")

# Quadrature of the continuum integrals
QUAD_TOL = float(os.getenv("QBM_QUAD_TOL", "1e-10"))
# Exponential cutoffs are integrated on [0, EXP_SPAN * Lambda]
EXP_SPAN = float(os.getenv("QBM_EXP_SPAN", "40"))

MAX_GRID_POINTS = int(os.getenv("QBM_MAX_GRID_POINTS", "4000000"))
THREADS = int(os.getenv("QBM_THREADS", "1"))

LOG_LEVEL = os.getenv("QBM_LOG_LEVEL", "INFO")
