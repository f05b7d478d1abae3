"""Django settings for the SIR coefficient inversion project."""
from __future__ import annotations
import os
from pathlib import Path

BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.environ.get("EPIDEMIC_SECRET_KEY", "django-insecure-change-me")
DEBUG = os.environ.get("EPIDEMIC_DEBUG", "0") == "1"
ALLOWED_HOSTS: list[str] = []

INSTALLED_APPS = [
    "django.contrib.auth",
    "django.contrib.contenttypes",
    "rest_framework",
    "epidemic.apps.EpidemicConfig",
]

DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": BASE_DIR / "db.sqlite3",
    }
}

LANGUAGE_CODE = "en-us"
TIME_ZONE = "UTC"
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "console": {"format": "{levelname} {asctime} {name} {message}", "style": "{"},
    },
    "handlers": {
        "console": {"class": "logging.StreamHandler", "formatter": "console"},
    },
    "loggers": {
        "epidemic": {
            "handlers": ["console"],
            "level": os.environ.get("EPIDEMIC_LOG_LEVEL", "INFO"),
            "propagate": False,
        },
    },
}

EPIDEMIC = {
    "OUTPUT_ROOT": BASE_DIR / "runs",
    "DEFAULT_PRESET": "A-M",
    "SLOW_TESTS": os.environ.get("EPIDEMIC_SLOW_TESTS", "0") == "1",
}
