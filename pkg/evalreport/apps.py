from django.apps import AppConfig


class EvalreportConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'evalreport'
