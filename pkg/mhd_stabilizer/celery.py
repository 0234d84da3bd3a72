"""
Celery app for the mhd_stabilizer project.

Convergence studies dispatch one task per mesh level. With
CELERY_TASK_ALWAYS_EAGER (the default) the tasks execute in-process, so the
command line works without a broker.
"""

import os
from celery import Celery

# Set default Django settings
os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'mhd_stabilizer.settings')

app = Celery('mhd_stabilizer')

# Load configuration from Django settings with CELERY namespace
app.config_from_object('django.conf:settings', namespace='CELERY')

# Auto-discover tasks from all registered Django apps
app.autodiscover_tasks()
