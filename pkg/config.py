"""
RMTLAB - Configuration
Numerical defaults, backend selection and acceptance thresholds.
Everything can be overridden through environment variables or a local .env
"""
import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


class Config:
    """
    Main configuration class for rmtlab

    Values are class attributes so experiment workers (separate processes)
    see the same settings as the parent without any handshake.
    """

    # ═══════════════════════════════════════════════════════════════
    # ENVIRONMENT
    # ═══════════════════════════════════════════════════════════════

    ENV = os.getenv('RMTLAB_ENV', 'production')  # development, production, testing
    DEBUG = os.getenv('RMTLAB_DEBUG', 'False').lower() == 'true'
    CODE_VERSION = os.getenv('RMTLAB_CODE_VERSION', '1.0.0')

    # ═══════════════════════════════════════════════════════════════
    # NUMERICAL BACKEND
    # ═══════════════════════════════════════════════════════════════

    # reference = self-contained Householder/QL/QR/Arnoldi, accelerated = LAPACK/ARPACK via scipy
    BACKEND = os.getenv('RMTLAB_BACKEND', 'reference')

    # Largest dimension a dense path may materialize (2N for a Hermitization)
    DENSE_CAP = int(os.getenv('RMTLAB_DENSE_CAP', '4096'))

    ARNOLDI_RESTARTS = int(os.getenv('RMTLAB_ARNOLDI_RESTARTS', '300'))
    QR_MAX_SWEEPS = int(os.getenv('RMTLAB_QR_MAX_SWEEPS', '60'))  # per eigenvalue
    QL_MAX_ITER = int(os.getenv('RMTLAB_QL_MAX_ITER', '60'))  # per eigenvalue

    RNG_ALGORITHM = 'Philox-4x64'

    # ═══════════════════════════════════════════════════════════════
    # EXECUTION & OUTPUT
    # ═══════════════════════════════════════════════════════════════

    OUTPUT_DIR = os.getenv('RMTLAB_OUTPUT_DIR', './runs')
    PARALLEL = int(os.getenv('RMTLAB_PARALLEL', '1'))

    # Wall-clock timings break byte-identical records, so they are opt-in
    RECORD_TIMINGS = os.getenv('RMTLAB_RECORD_TIMINGS', 'False').lower() == 'true'

    # ═══════════════════════════════════════════════════════════════
    # ACCEPTANCE THRESHOLDS
    # ═══════════════════════════════════════════════════════════════

    EPS_LOCAL_LAW = float(os.getenv('RMTLAB_EPS_LOCAL_LAW', '0.2'))
    EPS_OFFDIAG = float(os.getenv('RMTLAB_EPS_OFFDIAG', '0.15'))
    ACCEPT_QUANTILE = float(os.getenv('RMTLAB_ACCEPT_QUANTILE', '0.9'))
    RIGIDITY_CONSTANT = float(os.getenv('RMTLAB_RIGIDITY_CONSTANT', '5'))
    LAMBDA1_SLACK = float(os.getenv('RMTLAB_LAMBDA1_SLACK', '3'))
    KS_LEVEL = float(os.getenv('RMTLAB_KS_LEVEL', '0.01'))

    TOL_WARD = 1e-8
    TOL_PAIRING = 1e-8
    TOL_BLOCKTRACE = 1e-9
    TOL_SYMMETRY = 1e-10
    TOL_CUBIC = 1e-12

    # ═══════════════════════════════════════════════════════════════
    # LOGGING
    # ═══════════════════════════════════════════════════════════════

    LOG_LEVEL = os.getenv('RMTLAB_LOG_LEVEL', 'INFO')
    LOG_FILE = os.getenv('RMTLAB_LOG_FILE', './runs/rmtlab.log')

    # ═══════════════════════════════════════════════════════════════
    # HELPER METHODS
    # ═══════════════════════════════════════════════════════════════

    @classmethod
    def get_output_dir(cls):
        """Get output directory, create if not exists"""
        path = Path(cls.OUTPUT_DIR)
        path.mkdir(parents=True, exist_ok=True)
        return path

    @classmethod
    def get_log_file(cls):
        """Get log file path, create directory if not exists"""
        path = Path(cls.LOG_FILE)
        path.parent.mkdir(parents=True, exist_ok=True)
        return str(path)

    @classmethod
    def acceptance_defaults(cls):
        """Acceptance block used when an experiment config leaves a threshold out"""
        return {
            'eps_local_law': cls.EPS_LOCAL_LAW,
            'eps_offdiag': cls.EPS_OFFDIAG,
            'quantile': cls.ACCEPT_QUANTILE,
            'rigidity_constant': cls.RIGIDITY_CONSTANT,
            'lambda1_slack': cls.LAMBDA1_SLACK,
            'ks_level': cls.KS_LEVEL,
        }

    @classmethod
    def validate_config(cls):
        """
        Validate critical configuration
        Raises ValueError if configuration is invalid
        """
        errors = []

        if cls.BACKEND not in ('reference', 'accelerated'):
            errors.append(f"RMTLAB_BACKEND must be 'reference' or 'accelerated', got {cls.BACKEND!r}")

        if cls.DENSE_CAP < 2:
            errors.append(f"RMTLAB_DENSE_CAP must be at least 2, got {cls.DENSE_CAP}")

        if cls.PARALLEL < 1:
            errors.append(f"RMTLAB_PARALLEL must be positive, got {cls.PARALLEL}")

        if cls.ARNOLDI_RESTARTS < 1 or cls.QR_MAX_SWEEPS < 1 or cls.QL_MAX_ITER < 1:
            errors.append("iteration caps must be positive")

        if not 0 < cls.ACCEPT_QUANTILE <= 1:
            errors.append(f"RMTLAB_ACCEPT_QUANTILE must be between 0 and 1, got {cls.ACCEPT_QUANTILE}")

        if not 0 < cls.KS_LEVEL < 1:
            errors.append(f"RMTLAB_KS_LEVEL must be between 0 and 1, got {cls.KS_LEVEL}")

        if errors:
            raise ValueError(
                "Configuration validation failed:\n" +
                "\n".join(f"  - {err}" for err in errors)
            )

    @classmethod
    def get_config_summary(cls):
        """Serializable configuration summary, embedded in every output header"""
        return {
            'environment': cls.ENV,
            'code_version': cls.CODE_VERSION,
            'backend': cls.BACKEND,
            'dense_cap': cls.DENSE_CAP,
            'arnoldi_restarts': cls.ARNOLDI_RESTARTS,
            'qr_max_sweeps': cls.QR_MAX_SWEEPS,
            'ql_max_iter': cls.QL_MAX_ITER,
            'rng_algorithm': cls.RNG_ALGORITHM,
            'acceptance': cls.acceptance_defaults(),
        }


class DevelopmentConfig(Config):
    """Development-specific configuration"""
    DEBUG = True
    ENV = 'development'
    OUTPUT_DIR = './runs_dev'
    LOG_LEVEL = 'DEBUG'


class ProductionConfig(Config):
    """Production-specific configuration"""
    DEBUG = False
    ENV = 'production'
    # All other values from environment variables


class TestingConfig(Config):
    """Testing-specific configuration"""
    DEBUG = True
    ENV = 'testing'
    OUTPUT_DIR = '/tmp/rmtlab_test_runs'
    LOG_FILE = '/tmp/rmtlab_test_runs/rmtlab.log'
    LOG_LEVEL = 'DEBUG'
    DENSE_CAP = 1024


# Configuration selector
config_map = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig
}


def get_config(env=None):
    """
    Get configuration object based on environment

    Args:
        env: Environment name ('development', 'production', 'testing')
             If None, uses RMTLAB_ENV environment variable

    Returns:
        Config class appropriate for the environment
    """
    if env is None:
        env = os.getenv('RMTLAB_ENV', 'production')

    return config_map.get(env.lower(), ProductionConfig)


# Validate on import (in production)
if os.getenv('RMTLAB_ENV', 'production') == 'production':
    try:
        Config.validate_config()
    except ValueError as e:
        print(f"⚠️  CONFIGURATION ERROR: {e}")
        print("⚠️  Please check your .env file and environment variables")
