"""
Initialize utils module.
"""

from .config import deep_merge, load_simulation_config, load_yaml_config, substitute_env_vars
from .logging_config import get_audit_logger, setup_logging
from .monitoring import PerformanceMonitor, monitor_performance

__all__ = [
    'setup_logging',
    'get_audit_logger',
    'PerformanceMonitor',
    'monitor_performance',
    'deep_merge',
    'load_simulation_config',
    'load_yaml_config',
    'substitute_env_vars',
]
