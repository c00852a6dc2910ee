from django.apps import AppConfig


class AuthmetricsConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'authmetrics'
