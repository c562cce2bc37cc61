"""
Safety and consistency checks over simulation output.

Includes:
- check_safety: conflicting finalised blocks at one height across honest nodes
- check_chain_consistency: pairwise prefix agreement of honest chains
- RunValidator: bundles the checks for one run as CheckResult objects
"""

import logging
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

from ..consensus.chain import Chain


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Violation:
    height: int
    digests: tuple
    nodes: tuple

    def to_dict(self) -> Dict[str, Any]:
        return {"height": self.height, "digests": list(self.digests), "nodes": list(self.nodes)}


def check_safety(trace: Iterable[Dict[str, Any]]) -> List[Violation]:
    """One violation per height at which honest nodes decided or appended different blocks."""
    by_height: Dict[int, Dict[str, set]] = {}
    for record in trace:
        if record.get("type") not in ("decided", "block_appended"):
            continue
        if not record.get("honest", True):
            continue
        digests = by_height.setdefault(record["height"], {})
        digests.setdefault(record["digest"], set()).add(record["node"])

    violations = []
    for height in sorted(by_height):
        digests = by_height[height]
        if len(digests) > 1:
            nodes = sorted(set().union(*digests.values()))
            violations.append(Violation(height, tuple(sorted(digests)), tuple(nodes)))
            logger.error(f"Safety violation at height {height}: {len(digests)} distinct blocks")
    return violations


ChainLike = Union[Chain, Sequence[Union[bytes, str]]]


def _hashes(chain: ChainLike) -> List[Union[bytes, str]]:
    if isinstance(chain, Chain):
        return chain.block_hashes()
    return list(chain)


def check_chain_consistency(chains: Sequence[ChainLike], require_equal: bool = False) -> bool:
    """
    True iff every pair of chains agrees on their common heights (and, with
    `require_equal`, all chains have the same length).
    """
    sequences = [_hashes(c) for c in chains]
    if not sequences:
        return True
    shortest = min(len(s) for s in sequences)
    reference = max(sequences, key=len)
    for seq in sequences:
        if seq != reference[: len(seq)]:
            return False
    if require_equal and shortest != len(reference):
        return False
    return True


class CheckResult:
    """Outcome of one run check."""

    def __init__(self, check_name: str, passed: bool, message: str, details: Optional[Dict] = None):
        self.check_name = check_name
        self.passed = passed
        self.message = message
        self.details = details or {}
        self.timestamp = datetime.now()

    def to_dict(self) -> Dict[str, Any]:
        return {
            'check_name': self.check_name,
            'passed': self.passed,
            'message': self.message,
            'details': self.details,
            'timestamp': self.timestamp.isoformat()
        }

    def __repr__(self) -> str:
        status = "PASSED" if self.passed else "FAILED"
        return f"[{status}] {self.check_name}: {self.message}"


class RunValidator:
    """
    Runs the property checks over a finished simulation.

    Args:
        trace: Trace records of the run
        honest_chains: Final chains of the honest nodes
        stop_reason: Why the run stopped
        stop_met: Whether the configured stop condition was reached
    """

    CRITICAL_CHECKS = ('safety', 'chain_consistency')

    def __init__(
        self,
        trace: Sequence[Dict[str, Any]],
        honest_chains: Sequence[Chain],
        stop_reason: str,
        stop_met: bool,
    ):
        self.trace = trace
        self.honest_chains = honest_chains
        self.stop_reason = stop_reason
        self.stop_met = stop_met
        self.violations: List[Violation] = []
        self.validation_results: List[CheckResult] = []

    def validate_all(self) -> List[CheckResult]:
        self.validation_results = [
            self._check_safety(),
            self._check_chain_consistency(),
            self._check_stop_condition(),
        ]
        passed = sum(1 for r in self.validation_results if r.passed)
        logger.info(f"Run checks: {passed}/{len(self.validation_results)} passed")
        for result in self.validation_results:
            if not result.passed:
                logger.warning(str(result))
        return self.validation_results

    def _check_safety(self) -> CheckResult:
        self.violations = check_safety(self.trace)
        if self.violations:
            return CheckResult(
                'safety', False,
                f"{len(self.violations)} height(s) with conflicting finalised blocks",
                {'violations': [v.to_dict() for v in self.violations]},
            )
        return CheckResult('safety', True, "No conflicting finalised blocks")

    def _check_chain_consistency(self) -> CheckResult:
        require_equal = self.stop_reason == "quiescent"
        consistent = check_chain_consistency(self.honest_chains, require_equal=require_equal)
        heights = [c.height for c in self.honest_chains]
        if consistent:
            return CheckResult('chain_consistency', True, "Honest chains are prefix-compatible", {'heights': heights})
        return CheckResult('chain_consistency', False, "Honest chains diverge", {'heights': heights})

    def _check_stop_condition(self) -> CheckResult:
        if self.stop_met:
            return CheckResult('stop_condition', True, f"Stopped on {self.stop_reason}")
        return CheckResult('stop_condition', False, f"Stop condition not met ({self.stop_reason})")

    def get_validation_summary(self) -> Dict[str, Any]:
        total_checks = len(self.validation_results)
        passed_checks = sum(1 for r in self.validation_results if r.passed)
        return {
            'total_checks': total_checks,
            'passed': passed_checks,
            'failed': total_checks - passed_checks,
            'checks': {r.check_name: r.passed for r in self.validation_results},
        }

    def has_critical_failures(self) -> bool:
        return any(
            not r.passed and r.check_name in self.CRITICAL_CHECKS
            for r in self.validation_results
        )

    def all_passed(self) -> bool:
        return all(r.passed for r in self.validation_results)


__all__ = [
    "CheckResult",
    "RunValidator",
    "Violation",
    "check_chain_consistency",
    "check_safety",
]
