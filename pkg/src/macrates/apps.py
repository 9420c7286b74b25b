from django.apps import AppConfig


class MacRatesConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "macrates"
    verbose_name = "MAC rate allocation laboratory"
