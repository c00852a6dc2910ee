"""
Django settings for the cdpbench project.

Only the management-command machinery and the test runner are used; every
artifact the workbench produces lives on disk under the output directory.
"""

from pathlib import Path
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = config('SECRET_KEY', default='cdpbench-local-only')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    # Local apps
    'patterns',
    'printchan',
    'attack',
    'authmetrics',
    'classify',
    'evalreport',
    'experiments',
]

# No ORM tables: templates, scans, models and tables are files.
DATABASES = {}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Experiment defaults (overridable from the environment or the command line)

CDP_CONFIG = config('CDP_CONFIG', default=str(BASE_DIR / 'experiments' / 'configs' / 'desk.json'))
CDP_OUTPUT_DIR = config('CDP_OUTPUT_DIR', default='')
CDP_JOBS = config('CDP_JOBS', default=1, cast=int)
CDP_TORCH_THREADS = config('CDP_TORCH_THREADS', default=1, cast=int)


# Logging

CDP_LOG_LEVEL = config('CDP_LOG_LEVEL', default='INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '[{levelname}] {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        name: {'handlers': ['console'], 'level': CDP_LOG_LEVEL, 'propagate': False}
        for name in (
            'cdpbench', 'patterns', 'printchan', 'attack',
            'authmetrics', 'classify', 'evalreport', 'experiments',
        )
    },
}
