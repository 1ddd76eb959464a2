"""
Django settings for quality_rl project.
"""
import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv("SECRET_KEY", "django-insecure-dev-key-change-in-production")
DEBUG = os.getenv("DEBUG", "True").lower() == "true"
ALLOWED_HOSTS = []

INSTALLED_APPS = [
    # Local apps
    'quality_app',
]

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'autoescape': True,
        },
    },
]

# Run registry; every command records its manifest here
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.getenv("QUALITY_RL_DATABASE", str(BASE_DIR / 'db.sqlite3')),
    }
}

LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Reward shaping defaults (ramp width d, plateau amplitude A_max, task weight beta)
REWARD_RAMP_WIDTH = int(os.getenv("REWARD_RAMP_WIDTH", "5"))
REWARD_AMPLITUDE = float(os.getenv("REWARD_AMPLITUDE", "1.0"))
REWARD_BETA = float(os.getenv("REWARD_BETA", "1.0"))

# Long-running learning/ablation direction checks in the test suite
QUALITY_RL_SLOW_TESTS = os.getenv("QUALITY_RL_SLOW_TESTS", "False").lower() in ("1", "true")

QUALITY_RL_LOG_LEVEL = os.getenv("QUALITY_RL_LOG_LEVEL", "INFO").upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'quality_app': {
            'handlers': ['console'],
            'level': QUALITY_RL_LOG_LEVEL,
            'propagate': False,
        },
    },
}
