"""
Per-node blockchain store and block production.

Provides:
- Chain: append-only sequence of finalised blocks with incremental
  validator-set snapshots (validators for height h = fold of blocks 1..h-1)
- TransactionPool: FIFO source of block payloads
- VoteSchedule: scripted votes a proposer attaches to the blocks it builds
- create_new_proposed_block, dump_chain, chains_digest
"""

import json
import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

from .blocks import (
    EthereumBlock, FinalisedBlock, Vote, VoteAction,
    encode_transactions, genesis_validators, is_valid_block, is_valid_finalised_block,
)
from .crypto import Address, Digest, encode, hash_digest
from .errors import ChainAppendError
from .voting import ValidatorSet, VoteTally, apply_block_vote


logger = logging.getLogger(__name__)


class Chain:
    """
    Append-only chain of finalised blocks; index 0 is genesis.

    Appending returns a new Chain sharing the prior prefix, so a stored
    reference never changes under its holder.
    """

    def __init__(
        self,
        blocks: Tuple[FinalisedBlock, ...],
        snapshots: Tuple[Tuple[ValidatorSet, VoteTally], ...],
    ):
        self._blocks = blocks
        # _snapshots[k]: (validators, tally) after folding blocks 1..k
        self._snapshots = snapshots

    @classmethod
    def from_genesis(cls, genesis: FinalisedBlock) -> "Chain":
        if genesis.height != 0:
            raise ChainAppendError(f"Genesis must have height 0, got {genesis.height}")
        genesis_set = ValidatorSet.of(genesis_validators(genesis.block))
        return cls((genesis,), ((genesis_set, VoteTally()),))

    # -- sequence protocol ---------------------------------------------------

    def __len__(self) -> int:
        return len(self._blocks)

    def __getitem__(self, height: int) -> FinalisedBlock:
        return self._blocks[height]

    def __iter__(self) -> Iterator[FinalisedBlock]:
        return iter(self._blocks)

    @property
    def blocks(self) -> Tuple[FinalisedBlock, ...]:
        return self._blocks

    @property
    def tip(self) -> FinalisedBlock:
        return self._blocks[-1]

    @property
    def height(self) -> int:
        """Height of the last stored block."""
        return len(self._blocks) - 1

    @property
    def next_height(self) -> int:
        return len(self._blocks)

    @property
    def genesis_set(self) -> ValidatorSet:
        return self._snapshots[0][0]

    def prefix(self, length: int) -> "Chain":
        """The first `length` blocks (heights 0..length-1)."""
        if not 1 <= length <= len(self._blocks):
            raise IndexError(f"Prefix length {length} outside 1..{len(self._blocks)}")
        return Chain(self._blocks[:length], self._snapshots[:length])

    # -- validator sets ------------------------------------------------------

    def validators_at(self, height: int) -> ValidatorSet:
        """Validators authorised for the instance at `height` (1..next_height)."""
        if not 1 <= height <= len(self._blocks):
            raise IndexError(f"Validator set for height {height} not derivable from chain of {len(self)} blocks")
        return self._snapshots[height - 1][0]

    def tally_at(self, height: int) -> VoteTally:
        return self._snapshots[height - 1][1]

    def block_hashes(self) -> List[Digest]:
        return [fb.block.hash for fb in self._blocks]

    # -- append ---------------------------------------------------------------

    def append_finalised_block(self, fb: FinalisedBlock) -> "Chain":
        """
        Extend the chain by one block.

        Raises:
            ChainAppendError: on a height gap, wrong parent or invalid proof
        """
        if fb.height != self.next_height:
            raise ChainAppendError(f"Expected block at height {self.next_height}, got {fb.height}")
        if not is_valid_block(fb.block, self.tip.block):
            raise ChainAppendError(f"Block at height {fb.height} is not a valid child of the tip")
        validator_set = self.validators_at(fb.height)
        if not is_valid_finalised_block(fb, validator_set.members):
            raise ChainAppendError(f"Invalid finalisation proof at height {fb.height}")

        snapshot = apply_block_vote(validator_set, self._snapshots[-1][1], fb.block)
        return Chain(self._blocks + (fb,), self._snapshots + (snapshot,))

    def __repr__(self) -> str:
        return f"Chain(height={self.height})"


def append_finalised_block(chain: Chain, fb: FinalisedBlock) -> Chain:
    return chain.append_finalised_block(fb)


class TransactionPool:
    """FIFO transaction pool; entries leave only once a block carrying them is appended."""

    def __init__(self, transactions: Iterable[bytes] = ()):
        self._queue: deque = deque(transactions)

    def add(self, transaction: bytes):
        self._queue.append(transaction)

    def select(self, capacity: int) -> List[bytes]:
        """Peek the `capacity` oldest transactions."""
        return [self._queue[i] for i in range(min(capacity, len(self._queue)))]

    def remove_included(self, transactions: Iterable[bytes]):
        included = set(transactions)
        if included:
            self._queue = deque(tx for tx in self._queue if tx not in included)

    def __len__(self) -> int:
        return len(self._queue)


@dataclass(frozen=True)
class VoteInstruction:
    height_hint: int
    action: VoteAction
    target: Address


class VoteSchedule:
    """Votes one proposer should cast, in order."""

    def __init__(self, instructions: Iterable[VoteInstruction] = ()):
        self._instructions: List[VoteInstruction] = list(instructions)

    def next_vote(self, height: int, validator_set: ValidatorSet) -> Optional[Vote]:
        for instruction in self._instructions:
            if instruction.height_hint > height:
                continue
            member = instruction.target in validator_set
            if (instruction.action is VoteAction.ADD) != member:
                return Vote(instruction.action, instruction.target)
        return None

    def consume(self, vote: Optional[Vote]):
        """Drop the first instruction matching a vote that made it into the chain."""
        if vote is None:
            return
        for i, instruction in enumerate(self._instructions):
            if instruction.action is vote.action and instruction.target == vote.target:
                del self._instructions[i]
                return

    def __len__(self) -> int:
        return len(self._instructions)


def create_new_proposed_block(
    height: int,
    proposer: Address,
    chain: Chain,
    tx_pool: Optional[TransactionPool] = None,
    vote_schedule: Optional[VoteSchedule] = None,
    capacity: int = 16,
) -> EthereumBlock:
    """Build a block at `height` on top of chain[height-1]."""
    parent = chain[height - 1].block
    transactions = tx_pool.select(capacity) if tx_pool is not None else []
    vote = vote_schedule.next_vote(height, chain.validators_at(height)) if vote_schedule else None
    return EthereumBlock(
        parent_hash=parent.hash,
        height=height,
        proposer=proposer,
        payload=encode_transactions(transactions),
        vote=vote,
    )


def chain_records(chain: Chain) -> List[Dict]:
    """One JSON-ready record per finalised block."""
    records = []
    for fb in chain:
        vote = fb.block.vote
        records.append({
            "height": fb.height,
            "digest": fb.block.hash.hex(),
            "proposer": fb.block.proposer.hex(),
            "round": fb.proof.round,
            "seals": len(fb.proof.commit_seals),
            "vote": {"action": vote.action.value, "target": vote.target.hex()} if vote else None,
        })
    return records


def dump_chain(chain: Chain, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for record in chain_records(chain):
            f.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
    logger.info(f"Chain of height {chain.height} written to {path}")
    return path


def chains_digest(chains: Sequence[Chain]) -> str:
    """Digest over every chain's block-hash sequence."""
    return hash_digest(encode([chain.block_hashes() for chain in chains])).hex()


__all__ = [
    "Chain",
    "TransactionPool",
    "VoteInstruction",
    "VoteSchedule",
    "append_finalised_block",
    "chain_records",
    "chains_digest",
    "create_new_proposed_block",
    "dump_chain",
]
