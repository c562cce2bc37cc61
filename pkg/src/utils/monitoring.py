"""
Performance monitoring for simulation runs.

Tracks wall time, resident memory and CPU per operation (a scenario run,
a sweep) with psutil. Metrics are written under results/metrics and are
kept apart from the deterministic trace and summary files.
"""

import json
import logging
import time
from datetime import datetime
from functools import wraps
from pathlib import Path
from typing import Any, Dict, Optional, Union

import psutil


logger = logging.getLogger(__name__)


class PerformanceMonitor:
    """
    Monitors wall time and memory of simulator operations.

    Args:
        metrics_dir: Directory used by save_metrics() when no path is given
    """

    def __init__(self, metrics_dir: Union[str, Path] = 'results/metrics'):
        self.metrics = []
        self.metrics_dir = Path(metrics_dir)
        self.process = psutil.Process()

    def start_monitoring(self, operation: str, details: Optional[Dict] = None) -> Dict[str, Any]:
        """Start monitoring an operation."""
        metric = {
            'operation': operation,
            'start_time': datetime.now().isoformat(),
            'start_memory_mb': self.process.memory_info().rss / 1024 / 1024,
            'details': details or {},
            '_started': time.perf_counter(),
        }
        self.process.cpu_percent()
        logger.debug(f"Started monitoring: {operation}")
        return metric

    def stop_monitoring(self, metric: Dict, status: str = 'success', error: Optional[str] = None) -> Dict[str, Any]:
        """Stop monitoring and record results."""
        duration = time.perf_counter() - metric.pop('_started', time.perf_counter())
        memory_mb = self.process.memory_info().rss / 1024 / 1024

        metric.update({
            'end_time': datetime.now().isoformat(),
            'duration_seconds': round(duration, 3),
            'end_memory_mb': memory_mb,
            'peak_memory_mb': max(memory_mb, metric['start_memory_mb']),
            'cpu_percent': self.process.cpu_percent(),
            'status': status,
            'error': error
        })
        events = metric['details'].get('events')
        if events and duration > 0:
            metric['events_per_second'] = round(events / duration, 1)

        self.metrics.append(metric)
        logger.info(f"Completed {metric['operation']}: {duration:.2f}s, {memory_mb:.1f}MB")
        return metric

    def get_summary(self) -> Dict[str, Any]:
        """Get performance summary."""
        if not self.metrics:
            return {}

        total_duration = sum(m['duration_seconds'] for m in self.metrics)
        successful = sum(1 for m in self.metrics if m['status'] == 'success')

        return {
            'total_operations': len(self.metrics),
            'successful': successful,
            'failed': len(self.metrics) - successful,
            'total_duration_seconds': round(total_duration, 3),
            'average_duration_seconds': round(total_duration / len(self.metrics), 3),
            'peak_memory_mb': max(m['peak_memory_mb'] for m in self.metrics),
            'operations': self.metrics
        }

    def save_metrics(self, output_path: Optional[Union[str, Path]] = None) -> Path:
        """Save metrics to file."""
        if not output_path:
            self.metrics_dir.mkdir(parents=True, exist_ok=True)
            output_path = self.metrics_dir / f"performance_{datetime.now().strftime('%Y%m%d_%H%M%S')}.json"

        with open(output_path, 'w') as f:
            json.dump(self.get_summary(), f, indent=2, default=str)

        logger.info(f"Performance metrics saved to: {output_path}")
        return Path(output_path)


def monitor_performance(operation_name: str = None):
    """
    Decorator to monitor function performance.

    Args:
        operation_name: Name of the operation (defaults to function name)
    """
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            op_name = operation_name or func.__name__
            monitor = PerformanceMonitor()

            metric = monitor.start_monitoring(op_name)

            try:
                result = func(*args, **kwargs)
                monitor.stop_monitoring(metric, status='success')
                return result
            except Exception as e:
                monitor.stop_monitoring(metric, status='failed', error=str(e))
                raise

        return wrapper
    return decorator
