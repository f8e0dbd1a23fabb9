from django.apps import AppConfig


class MorseAppConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'morse_app'
    verbose_name = 'Morse-Smale-Witten workbench'
