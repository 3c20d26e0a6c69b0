from django.apps import AppConfig


class RegressorConfig(AppConfig):
    name = 'regressor'
