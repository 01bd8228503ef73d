from django.apps import AppConfig


class RepulsiveTransportConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'repulsive_transport'
    verbose_name = 'Repulsive multimarginal transport'
