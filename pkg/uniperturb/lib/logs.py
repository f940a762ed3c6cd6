"""Logging shared by long running toolkit services."""

import logging
import logging.handlers
import os

ROOT_LOGGER = "uniperturb"
LOG_FORMAT = "{asctime} - {levelname} - {message}"
LOG_DATE_FORMAT = "%Y-%m-%dT%H:%M:%S"


class LogConfig(object):
    """Configuration information to control where and how messages are recorded.

    Attributes:
        log: A string path to storage where logging messages will be stored, or None to skip file logging.
        debug: A boolean representing whether debug messages are recorded.
        max_bytes: Size of a log file before it is rotated.
        backups: Number of rotated log files kept.
    """

    LOG = None
    DEBUG = False
    MAX_BYTES = 10000000
    BACKUPS = 5

    def __init__(self, config: dict = None) -> None:
        """Initializes attributes from a user specified configuration object or defaults.

        Args:
            config: User predefined values for initialization.
        """
        if not config:
            config = {}
        log = config.get("log", LogConfig.LOG)
        self.log = os.path.abspath(os.path.expanduser(log)) if log else None
        self.debug = bool(config.get("debug", LogConfig.DEBUG))
        self.max_bytes = config.get("log_max_bytes", LogConfig.MAX_BYTES)
        self.backups = config.get("log_backups", LogConfig.BACKUPS)


class LogService(object):
    """Base service class which allows logging to a file and output.

    Attributes:
        logger: A logging object to write messages out to storage.
    """

    def __init__(self, logger: logging.Logger = None) -> None:
        """Set up the service with a given logger, or the toolkit's root logger."""
        self.logger = logger if logger is not None else logging.getLogger(ROOT_LOGGER)

    def log_message(self, message: str, external: bool = False, level: int = logging.INFO) -> None:
        """Logs a message to storage and to output visible to users.

        Args:
            message: The message to save and display.
            external: Whether the message is visible to user.
            level: Level used to determine the severity of the message.
        """
        if self.logger:
            self.logger.log(level, message)
        if external:
            print(message)


def setup_logger(config: LogConfig = None) -> logging.Logger:
    """Creates the toolkit logger which records the lifecycle of experiments.

    Handlers are only attached once, repeated calls only update the level.

    Args:
        config: Where to store messages and at which level.

    Returns:
        The root logger of the toolkit, parent of every module logger.
    """
    config = config or LogConfig()
    logger = logging.getLogger(ROOT_LOGGER)
    if config.log and not any(isinstance(handler, logging.FileHandler) for handler in logger.handlers):
        os.makedirs(os.path.dirname(config.log), exist_ok=True)
        formatter = logging.Formatter(fmt=LOG_FORMAT, datefmt=LOG_DATE_FORMAT, style="{")
        file_handler = logging.handlers.RotatingFileHandler(
            config.log, maxBytes=config.max_bytes, backupCount=config.backups, encoding="UTF-8"
        )
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)
    logger.setLevel(logging.DEBUG if config.debug else logging.INFO)
    return logger
