import os

import django

# Configure Django for pytest the same way manage.py does for ``manage.py test``.
os.environ.setdefault("DJANGO_SETTINGS_MODULE", "hop_site.settings")
django.setup()
