# Toolkit extensions
from celery import Celery

# Initialize extensions
celery = Celery('laserctl', include=['laserctl.tasks'])


def init_celery(settings):
    """Bind the shared Celery instance to the resolved settings."""
    celery.conf.update(
        broker_url=settings.get('CELERY_BROKER_URL'),
        result_backend=settings.get('CELERY_RESULT_BACKEND'),
        task_always_eager=settings.get('CELERY_ALWAYS_EAGER', True),
        task_eager_propagates=True,
        task_serializer='json',
        accept_content=['json'],
        result_serializer='json',
        timezone='UTC',
        enable_utc=True,
        task_track_started=True,
        task_time_limit=6 * 60 * 60,
        worker_prefetch_multiplier=1,
        result_expires=24 * 3600,
    )
    return celery
