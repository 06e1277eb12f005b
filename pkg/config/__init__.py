"""
Configuration Package

Exposes the environment-driven settings and the logging configuration.
"""

from config.settings import Settings, settings
from config.logging_config import LoggingConfig, logging_config

__all__ = ['Settings', 'settings', 'LoggingConfig', 'logging_config']
