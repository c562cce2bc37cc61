"""
Proposer selection.

The base rotation walks the address-sorted validator set starting from the
previous block's proposer (index 0 when that proposer is absent or the tip is
genesis). STICKY keeps that proposer for round 0, ROUND_ROBIN moves one step
on. The fair variant skips validators that proposed any of the latest f(n)
blocks.
"""

import logging
from dataclasses import dataclass
from enum import Enum

from .blocks import max_byzantine
from .crypto import Address
from .errors import ConfigurationError
from .voting import ValidatorSet


logger = logging.getLogger(__name__)


class ProposerSelection(str, Enum):
    STICKY = "sticky"
    ROUND_ROBIN = "round_robin"


@dataclass(frozen=True)
class ProposerMode:
    selection: ProposerSelection = ProposerSelection.ROUND_ROBIN
    fair: bool = False

    @classmethod
    def parse(cls, value: str) -> "ProposerMode":
        """Parse 'sticky', 'round_robin', 'sticky_fair' or 'round_robin_fair'."""
        text = value.strip().lower().replace("-", "_")
        fair = text.endswith("_fair")
        if fair:
            text = text[: -len("_fair")]
        try:
            return cls(ProposerSelection(text), fair)
        except ValueError:
            raise ConfigurationError(f"Unknown proposer mode: {value!r}") from None

    def __str__(self) -> str:
        return f"{self.selection.value}_fair" if self.fair else self.selection.value


def validators(chain_prefix) -> ValidatorSet:
    """Validators authorised for the height after the prefix tip."""
    return chain_prefix.validators_at(chain_prefix.next_height)


def _rotation(chain_prefix, r: int, selection: ProposerSelection) -> Address:
    members = validators(chain_prefix).members
    previous = chain_prefix.tip.block.proposer if chain_prefix.height >= 1 else None
    base = members.index(previous) if previous in members else 0
    offset = 0 if selection is ProposerSelection.STICKY else 1
    return members[(base + offset + r) % len(members)]


def fair_proposer(chain_prefix, r: int, selection: ProposerSelection = ProposerSelection.ROUND_ROBIN) -> Address:
    """
    The (r+1)-th rotation candidate that did not propose any of the latest
    f(n) non-genesis blocks.
    """
    n = len(validators(chain_prefix))
    f = max_byzantine(n)
    assert n - f > f, f"fair selection needs n - f > f (n={n}, f={f})"

    first = max(1, chain_prefix.height - f + 1)
    excluded = {chain_prefix[h].block.proposer for h in range(first, chain_prefix.height + 1)}

    accepted = 0
    j = 0
    while True:
        candidate = _rotation(chain_prefix, j, selection)
        if candidate not in excluded:
            if accepted == r:
                return candidate
            accepted += 1
        j += 1


def select_proposer(chain_prefix, r: int, mode: ProposerMode = ProposerMode()) -> Address:
    """Proposer for round `r` of the instance built on `chain_prefix`."""
    if mode.fair:
        return fair_proposer(chain_prefix, r, mode.selection)
    return _rotation(chain_prefix, r, mode.selection)


__all__ = [
    "ProposerMode",
    "ProposerSelection",
    "fair_proposer",
    "select_proposer",
    "validators",
]
