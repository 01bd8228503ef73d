import os
from pathlib import Path
from dotenv import load_dotenv


load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv('SECRET_KEY', 'repulsive-transport-local')

DEBUG = os.getenv('DEBUG', 'False') == 'True'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',

    'rest_framework',
    'repulsive_transport',
]

# Commands only; nothing is persisted.
DATABASES = {}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Transport construction configuration
TRANSPORT_CONFIG = {
    'SEED': int(os.getenv('TRANSPORT_SEED', 0)),
    'K_CUTOFF': int(os.getenv('TRANSPORT_K_CUTOFF', 64)),
    'SAMPLE_WEIGHT_DIVISOR': int(os.getenv('TRANSPORT_SAMPLE_WEIGHT_DIVISOR', 64)),
    'DUPLICATE_FACTOR': float(os.getenv('TRANSPORT_DUPLICATE_FACTOR', 2.0)),
    'MAX_HALVINGS': int(os.getenv('TRANSPORT_MAX_HALVINGS', 60)),
    'TAIL_SAFETY': float(os.getenv('TRANSPORT_TAIL_SAFETY', 0.5)),
    'COST_SAMPLE_CAP': int(os.getenv('TRANSPORT_COST_SAMPLE_CAP', 2000)),
    'EXPANSION_CAP': int(os.getenv('TRANSPORT_EXPANSION_CAP', 200000)),
    'ATOM_TOL': float(os.getenv('TRANSPORT_ATOM_TOL', 1e-9)),
    'CLOUD_TOL': float(os.getenv('TRANSPORT_CLOUD_TOL', 1e-9)),
    'LEDGER_TOL': float(os.getenv('TRANSPORT_LEDGER_TOL', 1e-12)),
    'OUTPUT_DIR': os.getenv('TRANSPORT_OUTPUT_DIR', 'out'),
}

LOG_FILE = os.getenv('TRANSPORT_LOG_FILE')
LOG_HANDLERS = ['console', 'file'] if LOG_FILE else ['console']

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
        **({'file': {
            'level': 'DEBUG',
            'class': 'logging.FileHandler',
            'filename': LOG_FILE,
            'formatter': 'simple',
        }} if LOG_FILE else {}),
    },
    'root': {
        'handlers': LOG_HANDLERS,
        'level': 'WARNING',
    },
    'loggers': {
        'django': {
            'handlers': LOG_HANDLERS,
            'level': os.getenv('DJANGO_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
        'repulsive_transport': {
            'handlers': LOG_HANDLERS,
            'level': os.getenv('TRANSPORT_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}
