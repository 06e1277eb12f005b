import os
from pathlib import Path
from typing import Dict, Optional, Union
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _env_bool(name: str, default: str = 'false') -> bool:
    return os.getenv(name, default).strip().lower() in ('1', 'true', 'yes', 'on')


class Settings:
    """
    Centralized application settings and configuration management
    """

    # Base Directory Configuration
    BASE_DIR: Path = Path(__file__).resolve().parent.parent
    DATA_DIR: Path = BASE_DIR / 'data'

    # Application Environment
    ENV: str = os.getenv('ENV', 'development')
    DEBUG: bool = ENV == 'development'

    # Conic solver configuration; a time limit of 0 means none
    SOLVER_CONFIG: Dict[str, Union[str, float, int]] = {
        'solver': os.getenv('SCREENING_SOLVER', 'CLARABEL'),
        'feas_tol': float(os.getenv('SCREENING_FEAS_TOL', 1e-8)),
        'gap_tol': float(os.getenv('SCREENING_GAP_TOL', 1e-8)),
        'max_iter': int(os.getenv('SCREENING_MAX_ITER', 200)),
        'time_limit': float(os.getenv('SCREENING_SOLVER_TIME_LIMIT', 0)),
    }

    # Screening protocol defaults (load variability 0, 102% cost factor)
    SCREENING_CONFIG: Dict[str, Union[str, float, int, Path]] = {
        'delta': float(os.getenv('SCREENING_DELTA', 0.0)),
        'cost_factor': float(os.getenv('SCREENING_COST_FACTOR', 1.02)),
        'classification_tol': float(os.getenv('SCREENING_CLASSIFY_TOL', 1e-4)),
        'classification_rule': os.getenv('SCREENING_CLASSIFY_RULE', 'optimizer'),
        'workers': int(os.getenv('SCREENING_WORKERS', 1)),
        'output_dir': Path(os.getenv('SCREENING_OUTPUT_DIR', BASE_DIR / 'reports')),
        'reference_costs': Path(
            os.getenv('SCREENING_REFERENCE_COSTS', DATA_DIR / 'reference_costs.csv')
        ),
    }

    # Power flow oracle configuration
    ORACLE_CONFIG: Dict[str, Union[float, int]] = {
        'tolerance': float(os.getenv('ORACLE_PF_TOL', 1e-8)),
        'max_iter': int(os.getenv('ORACLE_PF_MAX_ITER', 30)),
        'samples': int(os.getenv('SCREENING_SAMPLES', 200)),
        'seed': int(os.getenv('SCREENING_SEED', 0)),
        'voltage_jitter': float(os.getenv('ORACLE_VOLTAGE_JITTER', 0.02)),
    }

    # Optional external PGLib-OPF checkout
    PGLIB_OPF_DIR: Optional[Path] = (
        Path(os.environ['PGLIB_OPF_DIR']) if os.getenv('PGLIB_OPF_DIR') else None
    )

    # Screening run history
    DATABASE_CONFIG: Dict[str, Union[str, bool]] = {
        'url': os.getenv('DATABASE_URL', 'sqlite:///screening_history.db'),
        'echo': _env_bool('DATABASE_ECHO'),
    }

    # Logging Configuration
    LOGGING_CONFIG: Dict[str, Union[str, bool, Path]] = {
        'level': os.getenv('LOG_LEVEL', 'INFO'),
        'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        'log_dir': Path(os.getenv('LOG_DIR', BASE_DIR / 'logs')),
        'to_file': _env_bool('LOG_TO_FILE'),
    }

    @classmethod
    def is_production(cls) -> bool:
        """
        Check if the application is running in production environment

        :return: Boolean indicating production environment
        """
        return cls.ENV.lower() == 'production'

    @classmethod
    def validate_config(cls) -> None:
        """
        Validate numeric configuration settings

        :raises ValueError: If a setting is out of range
        """
        if cls.SOLVER_CONFIG['feas_tol'] <= 0 or cls.SOLVER_CONFIG['gap_tol'] <= 0:
            raise ValueError("Solver tolerances must be positive")
        if cls.SOLVER_CONFIG['max_iter'] < 1:
            raise ValueError("SCREENING_MAX_ITER must be at least 1")
        if cls.SOLVER_CONFIG['time_limit'] < 0:
            raise ValueError("SCREENING_SOLVER_TIME_LIMIT must be non-negative")
        if cls.SCREENING_CONFIG['delta'] < 0:
            raise ValueError("SCREENING_DELTA must be non-negative")
        if cls.SCREENING_CONFIG['cost_factor'] < 1:
            raise ValueError("SCREENING_COST_FACTOR must be at least 1")
        if cls.SCREENING_CONFIG['classification_tol'] <= 0:
            raise ValueError("SCREENING_CLASSIFY_TOL must be positive")
        if cls.SCREENING_CONFIG['workers'] < 1:
            raise ValueError("SCREENING_WORKERS must be at least 1")

    @classmethod
    def create_directories(cls) -> None:
        """
        Create necessary directories for the application
        """
        directories = [cls.SCREENING_CONFIG['output_dir']]
        if cls.LOGGING_CONFIG['to_file']:
            directories.append(cls.LOGGING_CONFIG['log_dir'])

        for directory in directories:
            directory.mkdir(parents=True, exist_ok=True)

    @classmethod
    def get_solver_config(cls) -> Dict[str, Union[str, float, int]]:
        """
        Get conic solver configuration

        :return: Solver configuration dictionary
        """
        return dict(cls.SOLVER_CONFIG)

    @classmethod
    def get_screening_config(cls) -> Dict[str, Union[str, float, int, Path]]:
        return dict(cls.SCREENING_CONFIG)

    @classmethod
    def get_oracle_config(cls) -> Dict[str, Union[float, int]]:
        return dict(cls.ORACLE_CONFIG)

    @classmethod
    def get_database_config(cls) -> Dict[str, Union[str, bool]]:
        """
        Get database configuration based on environment

        :return: Database configuration dictionary
        """
        config = dict(cls.DATABASE_CONFIG)
        if not cls.is_production():
            config['echo'] = config['echo'] and cls.DEBUG
        return config

    @classmethod
    def get_logging_config(cls) -> Dict[str, Union[str, bool, Path]]:
        """
        Get logging configuration

        :return: Logging configuration dictionary
        """
        return {
            **cls.LOGGING_CONFIG,
            'log_file': cls.LOGGING_CONFIG['log_dir'] / 'screening.log'
        }


# Validate config at import
Settings.validate_config()

# Singleton instance
settings = Settings
