"""
Timing formulas for round progression and liveness after GST.

All times are integer ticks. si denotes the tick at which a validator
started a given instance.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Mapping, Optional, Tuple

import pandas as pd

from ..consensus.blocks import quorum
from ..consensus.errors import UnboundedTerminationError


logger = logging.getLogger(__name__)

DEFAULT_ROUND_BOUND = 64


@dataclass(frozen=True)
class TimingParams:
    base: int
    delta: int
    instance_start: Mapping[str, int] = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if self.base <= 0 or self.delta <= 0:
            raise ValueError(f"base and delta must be positive (base={self.base}, delta={self.delta})")


def non_forced_round_start(si: int, r: int, base: int) -> int:
    """Start tick of round r when every earlier round ended by timer expiry."""
    return si + base * (2 ** r - 1)


def min_overlap(si_first: int, si_last: int, r: int, base: int) -> int:
    """Minimum time the first and last validators spend together in round r."""
    return max(si_first - si_last + base * 2 ** r, 0)


def quorum_start_window(instance_start: Mapping[str, int], n: int) -> Tuple[int, int]:
    """
    (siFirst, siLast) over the quorum(n) earliest-starting validators among
    `instance_start` (ties broken by node name).
    """
    ordered = sorted(instance_start.items(), key=lambda kv: (kv[1], kv[0]))
    group = ordered[: quorum(n)]
    if not group:
        raise ValueError("No instance start times supplied")
    return group[0][1], group[-1][1]


def gst_round(si_first: int, base: int, gst: int, bound: int = DEFAULT_ROUND_BOUND) -> int:
    """First round whose non-forced start for the first validator is at or after GST."""
    for r in range(bound + 1):
        if non_forced_round_start(si_first, r, base) >= gst:
            return r
    raise UnboundedTerminationError(f"No round up to {bound} starts after gst={gst}")


def first_terminating_round(
    params: TimingParams,
    gst_round_value: int,
    honest_proposer_at: Callable[[int], bool],
    n: Optional[int] = None,
    bound: int = DEFAULT_ROUND_BOUND,
) -> int:
    """
    Smallest r >= gst_round_value with an honest proposer and
    siFirst - siLast + base * 2^r >= 4 * delta.

    Raises:
        UnboundedTerminationError: no such round within `bound`
    """
    n = n if n is not None else len(params.instance_start)
    si_first, si_last = quorum_start_window(params.instance_start, n)
    for r in range(gst_round_value, bound + 1):
        if honest_proposer_at(r) and si_first - si_last + params.base * 2 ** r >= 4 * params.delta:
            return r
    raise UnboundedTerminationError(f"No terminating round in {gst_round_value}..{bound}")


# =============================================================================
# Trace extraction
# =============================================================================

def trace_frame(trace: Iterable[Dict]) -> pd.DataFrame:
    """Trace records as a DataFrame (one row per record, missing fields NaN)."""
    return pd.DataFrame.from_records(list(trace))


def instance_starts(trace: Iterable[Dict], height: int) -> Dict[str, int]:
    """Tick at which each node started the instance for `height`."""
    starts: Dict[str, int] = {}
    for record in trace:
        if record.get("type") == "instance_started" and record.get("height") == height:
            starts.setdefault(record["node"], record["time"])
    return starts


def observed_round_starts(trace: Iterable[Dict], node: str, height: int) -> Dict[int, int]:
    """Round -> tick at which `node` started that round of `height` (from its timer requests)."""
    starts: Dict[int, int] = {}
    for record in trace:
        if record.get("type") != "step" or record.get("node") != node:
            continue
        for action in record.get("actions", ()):
            if action.get("action") == "start_timer" and action.get("height") == height:
                starts.setdefault(action["round"], record["time"])
    return dict(sorted(starts.items()))


def finalisation_rounds(trace: Iterable[Dict], honest_only: bool = True) -> Dict[int, int]:
    """Height -> round of the first appended block record at that height."""
    rounds: Dict[int, int] = {}
    for record in trace:
        if record.get("type") != "block_appended":
            continue
        if honest_only and not record.get("honest", True):
            continue
        rounds.setdefault(record["height"], record["round"])
    return dict(sorted(rounds.items()))


__all__ = [
    "DEFAULT_ROUND_BOUND",
    "TimingParams",
    "finalisation_rounds",
    "first_terminating_round",
    "gst_round",
    "instance_starts",
    "min_overlap",
    "non_forced_round_start",
    "observed_round_starts",
    "quorum_start_window",
    "trace_frame",
]
