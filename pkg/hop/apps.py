from django.apps import AppConfig


class HopConfig(AppConfig):
    name = "hop"
    verbose_name = "Hop Decentralized Training Simulator"
