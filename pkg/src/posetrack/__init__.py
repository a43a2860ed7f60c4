import logging

from posetrack.utils.config import config

logging.getLogger(config.LOGGER_NAME).addHandler(logging.NullHandler())

__version__ = "0.1.0"
