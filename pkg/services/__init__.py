"""
Services Initialization Module

This module provides centralized service registration, initialization and
health checks for the screening application.
"""

import logging
from typing import Any, Dict, Optional


class ServiceManager:
    """
    Centralized service management and initialization
    """

    def __init__(self):
        """
        Initialize service manager
        """
        self.logger = logging.getLogger(__name__)
        self.services: Dict[str, Any] = {}
        self.service_configs: Dict[str, Dict[str, Any]] = {}

    def register_service(
        self,
        name: str,
        service: Any,
        config: Optional[Dict[str, Any]] = None
    ):
        """
        Register a service with optional configuration

        :param name: Service name
        :param service: Service instance
        :param config: Service-specific configuration
        """
        self.services[name] = service
        self.service_configs[name] = config or {}
        self.logger.debug(f"Service {name} registered")

    def initialize_services(self):
        """
        Initialize all registered services that expose an initialize hook
        """
        try:
            for name, service in self.services.items():
                if hasattr(service, 'initialize'):
                    service.initialize(**self.service_configs.get(name, {}))
                    self.logger.debug(f"Service {name} initialized")
        except Exception as e:
            self.logger.error(f"Services initialization error: {e}")
            raise

    def health_check(self) -> Dict[str, bool]:
        """
        Perform health checks on registered services

        :return: Service health status dictionary
        """
        health_status = {}
        for name, service in self.services.items():
            try:
                if hasattr(service, 'health_check'):
                    health_status[name] = bool(service.health_check())
                else:
                    health_status[name] = True
            except Exception as e:
                self.logger.error(f"Health check failed for {name}: {e}")
                health_status[name] = False
        return health_status

    def shutdown_services(self):
        """
        Gracefully shutdown all registered services
        """
        for name, service in self.services.items():
            try:
                if hasattr(service, 'shutdown'):
                    service.shutdown()
            except Exception as e:
                self.logger.error(f"Service shutdown error for {name}: {e}")


class ServiceConfig:
    """
    Service registration
    """

    @staticmethod
    def configure_dependencies(service_manager: ServiceManager, with_history: bool = False):
        """
        Register application services

        :param service_manager: Service manager instance
        :param with_history: Also register the run-history database
        """
        from services.conic_backend import default_backend
        from services.obbt_screening import screening_service

        service_manager.register_service('conic_backend', default_backend())
        service_manager.register_service('screening_service', screening_service)
        if with_history:
            from database import db_manager
            from services.history_service import history_service
            service_manager.register_service('database', db_manager)
            service_manager.register_service('history_service', history_service)


# Create singleton instances
service_manager = ServiceManager()


def initialize_application_services(with_history: bool = False) -> Dict[str, bool]:
    """
    Register, initialize and health-check the application services

    :param with_history: Include the run-history database
    :return: Health status per service
    """
    logger = logging.getLogger(__name__)
    try:
        ServiceConfig.configure_dependencies(service_manager, with_history)
        service_manager.initialize_services()
        health_status = service_manager.health_check()
        for service, status in health_status.items():
            if status:
                logger.debug(f"Service {service} healthy")
            else:
                logger.warning(f"Service {service} unhealthy")
        return health_status
    except Exception as e:
        logger.critical(f"Services initialization failed: {e}")
        raise


def shutdown_application_services():
    """
    Gracefully shutdown all application services
    """
    service_manager.shutdown_services()


# Export key components
__all__ = [
    'ServiceManager',
    'service_manager',
    'initialize_application_services',
    'shutdown_application_services'
]
