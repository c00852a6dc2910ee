from django.apps import AppConfig


class PrintchanConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'printchan'
