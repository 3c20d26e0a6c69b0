from django.apps import AppConfig


class GbtConfig(AppConfig):
    name = 'gbt'
