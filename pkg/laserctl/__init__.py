# Laser control toolkit for a three-well bifurcating molecular model

import logging
import os
from importlib import import_module
from logging.handlers import RotatingFileHandler

from dotenv import load_dotenv

from laserctl.extensions import init_celery

__version__ = '1.0.0'

# Load environment variables
load_dotenv()

logger = logging.getLogger('laserctl')


class Toolkit:
    """Resolved settings of one toolkit instance (the analogue of an app object)."""

    def __init__(self, name, settings):
        self.name = name
        self.config = settings

    def __getitem__(self, key):
        return self.config[key]

    def get(self, key, default=None):
        return self.config.get(key, default)

    def __repr__(self):
        return f'<Toolkit {self.name}>'


def _load_settings(config_name):
    module = import_module('config')
    config_class = module.config.get(config_name, module.config['default'])
    return {key: getattr(config_class, key) for key in dir(config_class) if key.isupper()}


def _configure_logging(settings):
    logger.setLevel(settings.get('LOG_LEVEL', 'INFO'))

    if not any(isinstance(h, logging.StreamHandler) and not isinstance(h, logging.FileHandler)
               for h in logger.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(name)s: %(message)s'))
        logger.addHandler(handler)

    log_file = settings.get('LOG_FILE')
    if log_file and not any(isinstance(h, RotatingFileHandler) for h in logger.handlers):
        try:
            os.makedirs(os.path.dirname(log_file) or '.', exist_ok=True)
            file_handler = RotatingFileHandler(log_file, maxBytes=10 * 1024 * 1024, backupCount=5)
            file_handler.setFormatter(logging.Formatter(
                '%(asctime)s %(levelname)s %(name)s [%(filename)s:%(lineno)d]: %(message)s'))
            logger.addHandler(file_handler)
        except OSError as e:
            logger.error(f"Failed to open log file {log_file}: {str(e)}")


def create_toolkit(config_name='development', **overrides):
    """Build a toolkit from one of the configuration classes in ``config.py``."""
    settings = _load_settings(config_name)
    settings.update({key.upper(): value for key, value in overrides.items() if value is not None})

    _configure_logging(settings)
    init_celery(settings)

    logger.debug(f"Toolkit created with '{config_name}' configuration")
    return Toolkit(config_name, settings)
