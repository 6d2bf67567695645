import os
from dotenv import load_dotenv

load_dotenv()


def _flag(name, default):
    return os.environ.get(name, default).lower() in ['true', 'on', '1']


class Config:
    """Base configuration class."""
    # Logging
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'INFO')
    LOG_FILE = os.environ.get('LOG_FILE', 'logs/laserctl.log')

    # Data and output locations
    DATA_DIR = os.environ.get('LASERCTL_DATA_DIR', 'data')
    OUTPUT_DIR = os.environ.get('LASERCTL_OUTPUT_DIR', 'runs')

    # Parallelism and memory
    THREADS = int(os.environ.get('LASERCTL_THREADS', 1))
    MEMORY_LIMIT_GB = float(os.environ.get('LASERCTL_MEMORY_LIMIT_GB', 2.0))
    DVR_MAX_DIM = int(os.environ.get('LASERCTL_DVR_MAX_DIM', 4096))

    # Celery configuration (distributed robustness scans)
    CELERY_BROKER_URL = os.environ.get('CELERY_BROKER_URL', 'redis://localhost:6379/0')
    CELERY_RESULT_BACKEND = os.environ.get('CELERY_RESULT_BACKEND', 'redis://localhost:6379/0')
    CELERY_ALWAYS_EAGER = _flag('CELERY_ALWAYS_EAGER', 'true')

    # Numerical defaults
    N_THETA = int(os.environ.get('LASERCTL_N_THETA', 128))
    N_PHI = int(os.environ.get('LASERCTL_N_PHI', 128))
    DT_AU = float(os.environ.get('LASERCTL_DT_AU', 1.0))
    EIGEN_COUNT = int(os.environ.get('LASERCTL_EIGEN_COUNT', 20))
    OBSERVABLE_STRIDE = int(os.environ.get('LASERCTL_OBSERVABLE_STRIDE', 100))


class DevelopmentConfig(Config):
    """Development configuration."""
    DEBUG = True
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'DEBUG')


class ProductionConfig(Config):
    """Production configuration."""
    DEBUG = False
    THREADS = int(os.environ.get('LASERCTL_THREADS', os.cpu_count() or 1))
    CELERY_ALWAYS_EAGER = _flag('CELERY_ALWAYS_EAGER', 'false')


class TestingConfig(Config):
    """Testing configuration."""
    TESTING = True
    DEBUG = True
    LOG_FILE = None
    THREADS = 1
    CELERY_ALWAYS_EAGER = True
    N_THETA = 32
    N_PHI = 32
    EIGEN_COUNT = 8
    OBSERVABLE_STRIDE = 10


# Configuration dictionary
config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}
