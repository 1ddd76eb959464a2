# quality_app/apps.py
from django.apps import AppConfig

class QualityAppConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'quality_app'
    verbose_name = 'Frame and video quality assessment'
