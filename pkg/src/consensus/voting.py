"""
Validator-set maintenance from votes carried in blocks.

A block proposer may attach one vote (ADD or REMOVE a target address). Votes
accumulate per (target, action) across blocks; once strictly more than half of
the current validators agree, the change applies from the next height and
every pending vote about that target is discarded.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Iterator, Mapping, Optional, Sequence, Tuple

from .blocks import EthereumBlock, FinalisedBlock, VoteAction, max_byzantine, quorum
from .crypto import Address, short_hex
from .errors import ConfigurationError


logger = logging.getLogger(__name__)

TallyKey = Tuple[Address, VoteAction]


@dataclass(frozen=True)
class ValidatorSet:
    """Validators authorised for one height, sorted ascending and duplicate-free."""

    members: Tuple[Address, ...]

    def __post_init__(self):
        if not self.members:
            raise ConfigurationError("A validator set needs at least one member")
        if list(self.members) != sorted(set(self.members)):
            raise ConfigurationError("Validator set members must be sorted and unique")

    @classmethod
    def of(cls, addresses: Iterable[Address]) -> "ValidatorSet":
        return cls(tuple(sorted(set(addresses))))

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self) -> Iterator[Address]:
        return iter(self.members)

    def __contains__(self, address: object) -> bool:
        return address in self.members

    def index(self, address: Address) -> int:
        return self.members.index(address)

    @property
    def quorum(self) -> int:
        return quorum(len(self.members))

    @property
    def max_byzantine(self) -> int:
        return max_byzantine(len(self.members))

    def with_member(self, address: Address) -> "ValidatorSet":
        return ValidatorSet.of(self.members + (address,))

    def without_member(self, address: Address) -> "ValidatorSet":
        return ValidatorSet.of(a for a in self.members if a != address)

    def __repr__(self) -> str:
        return f"ValidatorSet({[short_hex(a) for a in self.members]})"


@dataclass(frozen=True)
class VoteTally:
    """Pending votes: (target, action) -> voters. Empty entries are never stored."""

    pending: Mapping[TallyKey, FrozenSet[Address]] = field(default_factory=dict, hash=False)

    def voters(self, target: Address, action: VoteAction) -> FrozenSet[Address]:
        return self.pending.get((target, action), frozenset())

    def __len__(self) -> int:
        return len(self.pending)

    def to_dict(self) -> Dict[str, list]:
        return {
            f"{action.value}:{target.hex()}": sorted(v.hex() for v in voters)
            for (target, action), voters in sorted(self.pending.items(), key=lambda kv: (kv[0][0], kv[0][1].value))
        }


def apply_block_vote(
    validator_set: ValidatorSet,
    tally: VoteTally,
    block: EthereumBlock,
) -> Tuple[ValidatorSet, VoteTally]:
    """
    Fold one block's vote into (validator set, tally).

    Args:
        validator_set: Validators for the block's height
        tally: Pending votes before the block
        block: Block whose proposer may carry a vote

    Returns:
        Validator set effective from the next height, and the updated tally
    """
    vote = block.vote
    if vote is None or block.proposer not in validator_set:
        return validator_set, tally

    target, action = vote.target, vote.action
    if action is VoteAction.ADD and target in validator_set:
        return validator_set, tally
    if action is VoteAction.REMOVE and target not in validator_set:
        return validator_set, tally
    if action is VoteAction.REMOVE and len(validator_set) == 1:
        return validator_set, tally

    voter = block.proposer
    pending = dict(tally.pending)

    # latest vote wins
    opposite = (target, VoteAction.REMOVE if action is VoteAction.ADD else VoteAction.ADD)
    if voter in pending.get(opposite, frozenset()):
        remaining = pending[opposite] - {voter}
        if remaining:
            pending[opposite] = remaining
        else:
            del pending[opposite]

    voters = pending.get((target, action), frozenset()) | {voter}
    pending[(target, action)] = voters

    if len(voters) <= len(validator_set) // 2:
        return validator_set, VoteTally(pending)

    if action is VoteAction.ADD:
        new_set = validator_set.with_member(target)
    else:
        new_set = validator_set.without_member(target)
    logger.debug(
        f"Vote {action.value} {short_hex(target)} applied at height {block.height} "
        f"with {len(voters)}/{len(validator_set)} voters"
    )

    pending = {key: v for key, v in pending.items() if key[0] != target}
    if action is VoteAction.REMOVE:
        pending = {key: v - {target} for key, v in pending.items()}
        pending = {key: v for key, v in pending.items() if v}
    return new_set, VoteTally(pending)


def fold_votes(
    genesis_set: ValidatorSet,
    blocks: Sequence[FinalisedBlock],
    upto_height: Optional[int] = None,
) -> Tuple[ValidatorSet, VoteTally]:
    """Left fold of apply_block_vote over blocks 1..upto_height-1."""
    upto_height = len(blocks) if upto_height is None else upto_height
    validator_set, tally = genesis_set, VoteTally()
    for height in range(1, upto_height):
        validator_set, tally = apply_block_vote(validator_set, tally, blocks[height].block)
    return validator_set, tally


def fold_validators(
    genesis_set: ValidatorSet,
    blocks: Sequence[FinalisedBlock],
    upto_height: Optional[int] = None,
) -> ValidatorSet:
    """Validators authorised for `upto_height`, recomputed from scratch."""
    return fold_votes(genesis_set, blocks, upto_height)[0]


__all__ = [
    "ValidatorSet",
    "VoteTally",
    "apply_block_vote",
    "fold_validators",
    "fold_votes",
]
