"""
Centralized Logging System
"""

import logging
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional
import sys

from tcla.config import settings

LOGGING_CONFIG = settings.LOGGING_CONFIG


class LoggerManager:
    """Manage loggers for different modules"""

    _loggers = {}
    _log_dir: Optional[Path] = None

    @classmethod
    def get_logger(cls, name, log_file=None):
        """
        Get or create a logger

        Args:
            name: Logger name (e.g., 'synthgen', 'training', 'pipeline')
            log_file: Optional custom log file name

        Returns:
            logging.Logger instance
        """
        if name in cls._loggers:
            return cls._loggers[name]

        logger = cls._create_logger(name, log_file)
        cls._loggers[name] = logger
        return logger

    @classmethod
    def configure(cls, log_dir: Path):
        """
        Attach rotating file handlers under log_dir to every known logger.

        Loggers created afterwards pick the directory up automatically.
        """
        if not LOGGING_CONFIG['to_file']:
            return
        log_dir = Path(log_dir)
        if cls._log_dir == log_dir:
            return
        log_dir.mkdir(parents=True, exist_ok=True)
        cls._log_dir = log_dir
        for name, logger in cls._loggers.items():
            cls._replace_file_handler(logger, name, None)

    @classmethod
    def _create_logger(cls, name, log_file=None):
        """Create a new logger with handlers"""

        logger = logging.getLogger(f"tcla.{name}")
        logger.setLevel(getattr(logging, LOGGING_CONFIG['level']))
        logger.propagate = False

        # Remove existing handlers
        logger.handlers = []

        # Console handler
        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setLevel(logging.INFO)
        console_handler.setFormatter(logging.Formatter('%(levelname)s: %(message)s'))
        logger.addHandler(console_handler)

        if cls._log_dir is not None:
            cls._replace_file_handler(logger, name, log_file)

        return logger

    @classmethod
    def _replace_file_handler(cls, logger, name, log_file):
        """Swap the logger's file handler for one writing into the configured directory"""
        for handler in list(logger.handlers):
            if isinstance(handler, RotatingFileHandler):
                logger.removeHandler(handler)
                handler.close()

        file_handler = RotatingFileHandler(
            cls._log_dir / (log_file or f"{name}.log"),
            maxBytes=LOGGING_CONFIG['max_file_size'],
            backupCount=LOGGING_CONFIG['backup_count'],
            encoding='utf-8'
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(
            LOGGING_CONFIG['format'],
            datefmt=LOGGING_CONFIG['date_format']
        ))
        logger.addHandler(file_handler)

    @classmethod
    def log_exception(cls, logger, exception, context=""):
        """Log an exception with context"""
        logger.error(
            f"{context} - Exception: {type(exception).__name__}: {str(exception)}",
            exc_info=True
        )

    @classmethod
    def log_performance(cls, logger, operation, duration):
        """Log performance metrics"""
        logger.info(f"Performance - {operation}: {duration:.2f} seconds")


# Convenience functions
def get_training_logger():
    """Get training logger"""
    return LoggerManager.get_logger('training')

def get_evaluation_logger():
    """Get evaluation logger"""
    return LoggerManager.get_logger('evaluation')

def get_pipeline_logger():
    """Get pipeline logger"""
    return LoggerManager.get_logger('pipeline')
