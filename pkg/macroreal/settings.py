"""
Django settings for the macroreal project.

The project has no web front end; Django provides the management-command
runner, settings and test framework for the experiment commands.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/4.2/ref/settings/
"""

import os

import sys
# Build paths inside the project like this: os.path.join(BASE_DIR, ...)
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.append(BASE_DIR)

MACROREAL_VERSION = '1.0.0'

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'dev-only-macroreal-secret-key')

DEBUG = os.environ.get('MACROREAL_DEBUG', 'false').lower() in ('1', 'true', 'yes')

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'macrorealapp',
]

MIDDLEWARE = []


# Database
# Only the test runner touches it; experiment commands keep their state on disk.

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.path.join(BASE_DIR, 'db.sqlite3'),
    }
}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Experiment outputs and numerical defaults

RESULTS_ROOT = os.environ.get('MACROREAL_RESULTS_ROOT', os.path.join(BASE_DIR, 'results'))

LOG_LEVEL = os.environ.get('MACROREAL_LOG_LEVEL', 'INFO').upper()

GRID_OVERSAMPLE = int(os.environ.get('MACROREAL_GRID_OVERSAMPLE', '2'))

CLASSICAL_THRESHOLD = float(os.environ.get('MACROREAL_CLASSICAL_THRESHOLD', '0.05'))

CONDITION_TOLERANCE = float(os.environ.get('MACROREAL_CONDITION_TOLERANCE', '0.05'))

THREADS = int(os.environ.get('MACROREAL_THREADS', '1'))
