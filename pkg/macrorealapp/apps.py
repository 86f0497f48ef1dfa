"""
Django app configuration for the macrorealism experiment runner.
"""

from django.apps import AppConfig


class MacrorealappConfig(AppConfig):
    """
    Configuration class for the macrorealism experiments.

    The app owns the experiment commands (lgi_scan, qpf_render, classify,
    cond_check, circuit_bench) and the housekeeping command cleanup_runs.
    """

    default_auto_field = 'django.db.models.BigAutoField'
    name = 'macrorealapp'
    verbose_name = 'Macrorealism experiments'
