"""
Django settings for the mhd_stabilizer project.

The project has no database and no HTTP surface. Django provides the
configuration layer, the app registry and the ``manage.py`` command line;
Celery fans convergence studies out over mesh levels.

Every numerical tunable can be overridden from the environment or a ``.env``
file (see ``.env.example``).
"""

import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()
# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'mhd-stabilizer-local-only')

DEBUG = os.getenv('DEBUG', 'False') == 'True'

ENV = os.getenv('ENV', 'DEV')

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'mesh.apps.MeshConfig',
    'elements.apps.ElementsConfig',
    'linalg.apps.LinalgConfig',
    'physics.apps.PhysicsConfig',
    'viscosity.apps.ViscosityConfig',
    'solver.apps.SolverAppConfig',
    'scalar_dmp.apps.ScalarDmpConfig',
    'benchmarks.apps.BenchmarksConfig',
]

DATABASES = {}

TIME_ZONE = 'UTC'

USE_TZ = True


# ============================================================================
# CELERY & TASK QUEUE CONFIGURATION
# ============================================================================

CELERY_BROKER_URL = os.getenv('CELERY_BROKER_URL', 'redis://localhost:6379/0')
CELERY_RESULT_BACKEND = os.getenv('CELERY_RESULT_BACKEND', 'redis://localhost:6379/0')

# Convergence levels run in-process unless a worker is attached
CELERY_TASK_ALWAYS_EAGER = os.getenv('CELERY_TASK_ALWAYS_EAGER', 'True') == 'True'
CELERY_TASK_EAGER_PROPAGATES = True
CELERY_ACCEPT_CONTENT = ['json']
CELERY_TASK_SERIALIZER = 'json'
CELERY_RESULT_SERIALIZER = 'json'
CELERY_TIMEZONE = 'UTC'
CELERY_TASK_TRACK_STARTED = True
CELERY_TASK_TIME_LIMIT = 6 * 60 * 60  # 6 hours hard limit per mesh level


# ============================================================================
# LOGGING CONFIGURATION
# ============================================================================

LOGGED_APPS = ['mesh', 'elements', 'linalg', 'physics', 'viscosity', 'solver', 'scalar_dmp', 'benchmarks', 'mhd_stabilizer']

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {process:d} {message}',
            'style': '{',
        },
        'simple': {
            'format': '{levelname} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'level': os.getenv('LOG_LEVEL', 'INFO'),
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
        'file': {
            'level': 'DEBUG',
            'class': 'logging.handlers.RotatingFileHandler',
            'filename': os.path.join(BASE_DIR, 'logs', 'mhd_stabilizer.log'),
            'maxBytes': 1024 * 1024 * 10,  # 10MB
            'backupCount': 5,
            'formatter': 'verbose',
        },
    },
    'loggers': {
        name: {
            'handlers': ['console', 'file'],
            'level': 'INFO',
            'propagate': False,
        }
        for name in ['django', *LOGGED_APPS]
    },
}

# Create logs directory if it doesn't exist
LOGS_DIR = os.path.join(BASE_DIR, 'logs')
os.makedirs(LOGS_DIR, exist_ok=True)


# ============================================================================
# SOLVER CONFIGURATION
# ============================================================================

# Relative tolerances of the preconditioned CG solves
SOLVER_MASS_RTOL = float(os.getenv('SOLVER_MASS_RTOL', '1e-10'))
SOLVER_POISSON_RTOL = float(os.getenv('SOLVER_POISSON_RTOL', '1e-8'))
SOLVER_RESIDUAL_RTOL = float(os.getenv('SOLVER_RESIDUAL_RTOL', '1e-8'))
SOLVER_CG_MAX_ITER = int(os.getenv('SOLVER_CG_MAX_ITER', '5000'))

SOLVER_RK_SCHEME = os.getenv('SOLVER_RK_SCHEME', 'rk4')
SOLVER_VISCOSITY = os.getenv('SOLVER_VISCOSITY', 'rv')
SOLVER_CLEANING = os.getenv('SOLVER_CLEANING', 'True') == 'True'


# ============================================================================
# BENCHMARK CONFIGURATION
# ============================================================================

BENCH_SEED = int(os.getenv('BENCH_SEED', '0'))
BENCH_OUTPUT_DIR = os.getenv('BENCH_OUTPUT_DIR', os.path.join(BASE_DIR, 'output'))
