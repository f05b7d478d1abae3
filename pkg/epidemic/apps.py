from __future__ import annotations

from django.apps import AppConfig


class EpidemicConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "epidemic"
    verbose_name = "SIR coefficient inversion"
