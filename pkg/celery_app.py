import os

from laserctl import create_toolkit
from laserctl.extensions import celery


def make_celery(toolkit):
    """Configure the shared Celery instance for a worker process."""
    celery.conf.update(
        broker_url=toolkit.config['CELERY_BROKER_URL'],
        result_backend=toolkit.config['CELERY_RESULT_BACKEND'],
        task_always_eager=False,
        task_soft_time_limit=5 * 60 * 60,
        worker_max_tasks_per_child=1000,
    )
    return celery


# Worker entry point: celery -A celery_app worker
toolkit = create_toolkit(os.environ.get('LASERCTL_ENV', 'production'))
celery = make_celery(toolkit)

import laserctl.tasks  # noqa: E402,F401  register tasks
