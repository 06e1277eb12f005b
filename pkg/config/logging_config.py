import logging
import logging.handlers
from pathlib import Path
from typing import Optional, Union

import colorlog

from config.settings import settings


class LoggingConfig:
    """
    Logging configuration for the screening application
    Colored console output plus an optional rotating log file
    """

    def __init__(self, log_dir: Optional[Path] = None, log_level: Union[int, str] = logging.INFO):
        """
        Initialize logging configuration

        :param log_dir: Directory for log files
        :param log_level: Logging level
        """
        self.log_dir = Path(log_dir) if log_dir else settings.LOGGING_CONFIG['log_dir']
        self.log_level = self._coerce_level(log_level)
        self.loggers = {}

    @staticmethod
    def _coerce_level(level: Union[int, str]) -> int:
        if isinstance(level, str):
            return logging.getLevelName(level.upper()) if level.upper() in (
                'DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'
            ) else logging.INFO
        return level

    def _create_console_handler(self) -> logging.Handler:
        """
        Create colored console logging handler

        :return: Console handler
        """
        console_handler = colorlog.StreamHandler()
        console_handler.setFormatter(colorlog.ColoredFormatter(
            '%(log_color)s%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S',
            log_colors={
                'DEBUG': 'cyan',
                'INFO': 'green',
                'WARNING': 'yellow',
                'ERROR': 'red',
                'CRITICAL': 'red,bg_white',
            }
        ))
        console_handler.setLevel(self.log_level)
        return console_handler

    def _create_file_handler(self, logger_name: str) -> logging.Handler:
        """
        Create rotating file logging handler

        :param logger_name: Name of the logger
        :return: File handler
        """
        self.log_dir.mkdir(parents=True, exist_ok=True)
        file_handler = logging.handlers.RotatingFileHandler(
            self.log_dir / f'{logger_name}.log',
            maxBytes=10 * 1024 * 1024,  # 10 MB
            backupCount=5
        )
        file_handler.setFormatter(logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s [%(filename)s:%(lineno)d]',
            datefmt='%Y-%m-%d %H:%M:%S'
        ))
        file_handler.setLevel(self.log_level)
        return file_handler

    def get_logger(self, name: str, console: bool = True, file: bool = False) -> logging.Logger:
        """
        Get or create a logger with specified handlers

        :param name: Logger name
        :param console: Enable console logging
        :param file: Enable file logging
        :return: Configured logger
        """
        if name in self.loggers:
            return self.loggers[name]

        logger = logging.getLogger(name)
        logger.setLevel(self.log_level)
        logger.propagate = False
        logger.handlers.clear()

        if console:
            logger.addHandler(self._create_console_handler())
        if file:
            logger.addHandler(self._create_file_handler(name))

        self.loggers[name] = logger
        return logger

    def configure_global_logging(self, level: Optional[Union[int, str]] = None,
                                 to_file: Optional[bool] = None) -> None:
        """
        Configure the root logger used by every module

        :param level: Override for the configured level
        :param to_file: Override for file logging
        """
        if level is not None:
            self.log_level = self._coerce_level(level)
        if to_file is None:
            to_file = settings.LOGGING_CONFIG['to_file']

        handlers = [self._create_console_handler()]
        if to_file:
            handlers.append(self._create_file_handler('screening'))

        logging.basicConfig(level=self.log_level, handlers=handlers, force=True)

        # cvxpy is chatty at INFO
        logging.getLogger('__cvxpy__').setLevel(max(self.log_level, logging.WARNING))


# Create a singleton instance
logging_config = LoggingConfig(log_level=settings.LOGGING_CONFIG['level'])
