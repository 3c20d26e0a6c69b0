from django.apps import AppConfig


class LawfitConfig(AppConfig):
    name = 'lawfit'
