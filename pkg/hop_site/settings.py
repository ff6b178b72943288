"""
Django settings for the hop_site project.

The project only exists to run the ``hop`` management command and the test-suite; it serves no pages and has no
database.
"""

import os

from hop.core import constants

BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = "hop-site-local-development-key-not-for-deployment"

DEBUG = True

ALLOWED_HOSTS = []

INSTALLED_APPS = ["hop"]

DATABASES = {}

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_TZ = True

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "simple": {"format": "{asctime} {levelname} {name}: {message}", "style": "{"},
    },
    "handlers": {
        "console": {"class": "logging.StreamHandler", "formatter": "simple"},
    },
    "loggers": {
        "hop": {"handlers": ["console"], "level": os.environ.get("HOP_LOG_LEVEL", "WARNING"), "propagate": False},
    },
}

# Hop simulator options.
HOP_OUTPUT_DIR = os.environ.get("HOP_OUTPUT_DIR", os.path.join(BASE_DIR, constants.DEFAULT_OUTPUT_DIR))
HOP_RUNTIME_ASSERTS = constants.DEFAULT_RUNTIME_ASSERTS
HOP_STRICT_REORDER = constants.DEFAULT_STRICT_REORDER
HOP_SUITE_WORKERS = constants.DEFAULT_SUITE_WORKERS
