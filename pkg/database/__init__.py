"""
Database Initialization and Management Module

This module provides the engine and session management for the screening
run history.
"""

import logging
from contextlib import contextmanager
from typing import Iterator, Optional

from sqlalchemy import create_engine, inspect
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import Session, scoped_session, sessionmaker
from sqlalchemy.pool import StaticPool

from config.settings import settings
from database.models import Base, BranchOutcome, ScreeningRun

# Configure logger
logger = logging.getLogger(__name__)


class DatabaseManager:
    """
    Database connection and session management for run history
    """

    def __init__(self, url: Optional[str] = None, echo: Optional[bool] = None):
        """
        Configure the engine; no connection is opened until first use

        :param url: SQLAlchemy database URL (defaults to DATABASE_URL)
        :param echo: Log SQL statements
        """
        self._engine = None
        self.configure(url, echo)

    def configure(self, url: Optional[str] = None, echo: Optional[bool] = None):
        """
        Bind the manager to a database, disposing any previous engine

        :param url: SQLAlchemy database URL (defaults to DATABASE_URL)
        :param echo: Log SQL statements
        """
        db_config = settings.get_database_config()
        self.dispose()
        self.url = url or db_config['url']
        try:
            options = {'echo': bool(db_config['echo'] if echo is None else echo)}
            if self.url in ('sqlite://', 'sqlite:///:memory:'):
                # one shared connection, otherwise every session sees an empty database
                options.update(poolclass=StaticPool, connect_args={'check_same_thread': False})
            self._engine = create_engine(self.url, **options)

            # Create scoped session for thread safety
            self._session_factory = sessionmaker(bind=self._engine, autoflush=False)
            self.Session = scoped_session(self._session_factory)
        except Exception as e:
            logger.error(f"Database initialization failed: {e}")
            raise

    @property
    def engine(self):
        return self._engine

    def initialize(self, **config):
        """
        Service hook: create tables on startup
        """
        self.create_tables()

    @contextmanager
    def get_session(self) -> Iterator[Session]:
        """
        Context manager for database sessions
        Ensures proper session management and error handling

        :yields: Database session
        """
        session = self.Session()
        try:
            yield session
            session.commit()
        except SQLAlchemyError as e:
            session.rollback()
            logger.error(f"Database session error: {e}")
            raise
        finally:
            session.close()
            self.Session.remove()

    def create_tables(self):
        """
        Create all database tables defined in models
        """
        try:
            Base.metadata.create_all(self._engine)
            logger.debug(f"History tables ready at {self.url}")
        except SQLAlchemyError as e:
            logger.error(f"Error creating database tables: {e}")
            raise

    def table_exists(self, table_name: str) -> bool:
        """
        Check if a specific table exists in the database

        :param table_name: Name of the table to check
        :return: Boolean indicating table existence
        """
        try:
            inspector = inspect(self._engine)
            return table_name in inspector.get_table_names()
        except SQLAlchemyError as e:
            logger.error(f"Error checking table existence: {e}")
            return False

    def health_check(self) -> bool:
        return self.table_exists(ScreeningRun.__tablename__)

    def dispose(self):
        """
        Dispose of database engine and close all connections
        """
        try:
            if self._engine:
                self._engine.dispose()
                logger.debug("Database connections closed")
        except Exception as e:
            logger.error(f"Error closing database connections: {e}")

    shutdown = dispose


# Create singleton database manager instance
db_manager = DatabaseManager()


# Export key components
__all__ = [
    'Base',
    'ScreeningRun',
    'BranchOutcome',
    'DatabaseManager',
    'db_manager'
]
