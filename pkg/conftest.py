import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'macroreal.settings')
django.setup()
