"""
Django settings for the Edge Cache RL Lab.

The project has no HTTP surface: Django provides settings, management
commands (the experiment CLI), the ORM used for run tracking, and the
pytest-django integration.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path

from decouple import config, Csv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: the default key is only meant for local experiment runs
SECRET_KEY = config('SECRET_KEY', default='edgecache-local-experiments-only')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = config('ALLOWED_HOSTS', default='localhost,127.0.0.1', cast=Csv())


# Application definition

INSTALLED_APPS = [
    'django.contrib.auth',
    'django.contrib.contenttypes',

    # Third-party apps
    'rest_framework',

    # Your apps
    'rl_caching',
]


# Database
# https://docs.djangoproject.com/en/5.2/ref/settings/#databases

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': config('DATABASE_NAME', default=str(BASE_DIR / 'db.sqlite3')),
    }
}


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Logging: every record carries the run id of the experiment that emitted it
LOG_LEVEL = config('LOG_LEVEL', default='INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'filters': {
        'run_id': {
            '()': 'config.run_context.RunIdLoggingFilter',
        },
    },
    'formatters': {
        'verbose': {
            'format': '[%(run_id)s] %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'filters': ['run_id'],
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'rl_caching': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': True,
        },
        'config': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': True,
        },
    },
}


# Celery: eager by default so a laptop run needs no broker.
# Point CELERY_BROKER_URL at redis://... and start_worker.sh to fan seeds out.
CELERY_BROKER_URL = config('CELERY_BROKER_URL', default='memory://')
CELERY_RESULT_BACKEND = config('CELERY_RESULT_BACKEND', default='cache+memory://')
CELERY_TASK_ALWAYS_EAGER = config('CELERY_TASK_ALWAYS_EAGER', default=True, cast=bool)
CELERY_TASK_EAGER_PROPAGATES = True


# Domain defaults
EDGE_CACHE = {
    # Named portable generator; every trace, policy and agent draws from it
    'RNG_ALGORITHM': 'PCG64',
    'DEFAULT_CONTENTS': 1000,
    'DEFAULT_WINDOW': 1000,
    'TRAFFIC_SHARE': 0.8,
    'LATENCY': {
        'edge_ms': 5.0,
        'remote_base_ms': 50.0,
        'remote_jitter_ms': 20.0,
    },
    'CALIBRATION': {
        's_min': 0.01,
        's_max': 10.0,
        'resolution': 1e-6,
    },
    # Exponent quoted for "5% of contents carry 80% of traffic"
    'REFERENCE_ZIPF_S': 1.25,
    'CHECKPOINT_FORMAT_VERSION': 1,
    'BASELINES': ['lfu_window', 'lfu_lifetime', 'lru', 'fifo', 'random', 'static_oracle'],
    # (storage fraction, effective-contents target, reference hit ratio)
    'TABLE1_SCENARIOS': [
        (0.10, 0.05, 0.74),
        (0.20, 0.05, 0.82),
        (0.20, 0.10, 0.75),
        (0.30, 0.10, 0.81),
    ],
    'TABLE1_TOLERANCE': 0.07,
    'EXAMPLE_CONFIG': BASE_DIR / 'experiments' / 'default.env',
}
