from django.apps import AppConfig


class DrugqmlConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "drugqml"
    verbose_name = "Hybrid quantum-classical drug discovery"
