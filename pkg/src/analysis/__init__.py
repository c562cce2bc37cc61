"""
Analysis package: timing formulas and run checks.
"""

from .checks import CheckResult, RunValidator, Violation, check_chain_consistency, check_safety
from .timing import (
    TimingParams,
    finalisation_rounds,
    first_terminating_round,
    gst_round,
    instance_starts,
    min_overlap,
    non_forced_round_start,
    observed_round_starts,
    quorum_start_window,
    trace_frame,
)

__all__ = [
    'CheckResult',
    'RunValidator',
    'TimingParams',
    'Violation',
    'check_chain_consistency',
    'check_safety',
    'finalisation_rounds',
    'first_terminating_round',
    'gst_round',
    'instance_starts',
    'min_overlap',
    'non_forced_round_start',
    'observed_round_starts',
    'quorum_start_window',
    'trace_frame',
]
