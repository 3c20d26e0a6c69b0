"""
Django settings for the cplaw project.

The project has no database, no HTTP surface and no cache: Django provides
the settings layer, the management-command CLI and the test runner. All
pipeline parameters live in ``pipeline.json`` (see ``PIPELINE_CONFIG``).
"""

import json
import os
from pathlib import Path

from django.core.exceptions import ImproperlyConfigured

from utils.custom_logger import setup_logging


# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

PIPELINE_CONFIG = Path(os.environ.get("CPLAW_PIPELINE_CONFIG", BASE_DIR / "pipeline.json"))

with open(PIPELINE_CONFIG) as pipeline_file:
    pipeline = json.load(pipeline_file)


def get_setting(setting, config=pipeline):
    """Get pipeline setting or fail with ImproperlyConfigured"""
    try:
        return config[setting]
    except KeyError as e:
        raise ImproperlyConfigured(f"Set the {setting} setting in {PIPELINE_CONFIG.name}") from e


SECRET_KEY = get_setting("SECRET_KEY")

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

django_apps = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
]

third_party_apps = ['rest_framework']
cplaw_apps = [
    "configs",
    "ingest",
    "lawfit",
    "regressor",
    "gbt",
    "selection",
    "evaluation",
    "synth",
]

INSTALLED_APPS = django_apps + third_party_apps + cplaw_apps

# Offline pipeline: no database, tests run on SimpleTestCase.
DATABASES = {}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

REST_FRAMEWORK = {
    "DEFAULT_RENDERER_CLASSES": ("rest_framework.renderers.JSONRenderer",),
    "UNAUTHENTICATED_USER": None,
}

# Resolved pipeline defaults, every subcommand starts from these.
CPLAW = {
    "schema_version": get_setting("schema_version"),
    "paths": get_setting("paths"),
    "ingest": get_setting("ingest"),
    "split": get_setting("split"),
    "fit": get_setting("fit"),
    "train": get_setting("train"),
    "gbt": get_setting("gbt"),
    "sweep": get_setting("sweep"),
    "contour": get_setting("contour"),
    "synth": get_setting("synth"),
    "metric_targets": get_setting("metric_targets"),
}

LOG_DIR = pipeline.get("LOG_DIR")

#Initilizing logger
setup_logging(LOG_DIR)
