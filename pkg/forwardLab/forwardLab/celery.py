"""
This file contains the setup and configuration for Celery in forwardLab project, including the creation of the Celery
application instance, loading configuration from Django settings, and discovering tasks automatically from Django apps.
Training runs queued from the CLI or the REST API are executed by these workers.
"""

import os
from celery import Celery


os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'forwardLab.settings')

app = Celery('forwardLab')

app.conf.broker_connection_retry_on_startup = True

app.config_from_object('django.conf:settings', namespace='CELERY')

app.autodiscover_tasks()
