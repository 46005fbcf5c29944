from django.apps import AppConfig


class RlCachingConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'rl_caching'
    verbose_name = 'RL Edge Caching'
