from django.apps import AppConfig


class ViscosityConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'viscosity'
