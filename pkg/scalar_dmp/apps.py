from django.apps import AppConfig


class ScalarDmpConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'scalar_dmp'
