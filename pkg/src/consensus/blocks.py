"""
Block types and validity rules.

The Ethereum header is reduced to {parentHash, height, proposer, payload, vote}.
The payload is the canonical encoding of a list of opaque transactions; the
genesis payload carries the initial validator list instead.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Collection, Optional, Sequence, Tuple

from .crypto import (
    ADDRESS_SIZE, ZERO_ADDRESS, ZERO_DIGEST,
    Address, Digest, Signature, decode, encode, hash_digest, recover_address, short_hex,
)
from .errors import DecodeError, DomainError


logger = logging.getLogger(__name__)


def quorum(n: int) -> int:
    """ceil(2n/3): prepares, commits and round changes needed for progress."""
    if n < 1:
        raise DomainError(f"quorum undefined for {n} validators")
    return math.ceil(2 * n / 3)


def max_byzantine(n: int) -> int:
    """floor((n-1)/3): Byzantine validators tolerated out of n."""
    if n < 1:
        raise DomainError(f"maxByzantine undefined for {n} validators")
    return (n - 1) // 3


class VoteAction(str, Enum):
    ADD = "add"
    REMOVE = "remove"


@dataclass(frozen=True)
class Vote:
    action: VoteAction
    target: Address

    def to_tree(self) -> Tuple:
        return (self.action.value, self.target)

    @classmethod
    def from_tree(cls, tree: Any) -> "Vote":
        action, target = tree
        return cls(VoteAction(action), target)


def encode_transactions(transactions: Sequence[bytes]) -> bytes:
    return encode(list(transactions))


EMPTY_PAYLOAD = encode([])


def decode_transactions(payload: bytes) -> Optional[Tuple[bytes, ...]]:
    """Transactions in a payload, or None when the payload is malformed."""
    try:
        value = decode(payload)
    except (DecodeError, ValueError):
        return None
    if not isinstance(value, tuple) or not all(isinstance(tx, bytes) for tx in value):
        return None
    return value


@dataclass(frozen=True)
class EthereumBlock:
    parent_hash: Digest
    height: int
    proposer: Address
    payload: bytes = field(default=EMPTY_PAYLOAD, repr=False)
    vote: Optional[Vote] = None

    def to_tree(self) -> Tuple:
        return (
            "eth_block",
            self.parent_hash,
            self.height,
            self.proposer,
            self.payload,
            self.vote.to_tree() if self.vote else None,
        )

    @classmethod
    def from_tree(cls, tree: Any) -> "EthereumBlock":
        tag, parent_hash, height, proposer, payload, vote = tree
        if tag != "eth_block":
            raise DecodeError(f"Expected eth_block, got {tag!r}")
        return cls(parent_hash, height, proposer, payload, Vote.from_tree(vote) if vote else None)

    @cached_property
    def hash(self) -> Digest:
        return hash_digest(encode(self.to_tree()))

    @property
    def transactions(self) -> Tuple[bytes, ...]:
        return decode_transactions(self.payload) or ()

    def __repr__(self) -> str:
        return (
            f"EthereumBlock(h={self.height}, hash={short_hex(self.hash)}, "
            f"proposer={short_hex(self.proposer)})"
        )


@dataclass(frozen=True)
class ProposedBlock:
    """(Ethereum block, round at which it was proposed): the value agreed upon."""

    block: EthereumBlock
    round: int

    def to_tree(self) -> Tuple:
        return ("proposed_block", self.block.to_tree(), self.round)

    @classmethod
    def from_tree(cls, tree: Any) -> "ProposedBlock":
        tag, block, rnd = tree
        if tag != "proposed_block":
            raise DecodeError(f"Expected proposed_block, got {tag!r}")
        return cls(EthereumBlock.from_tree(block), rnd)

    @cached_property
    def digest(self) -> Digest:
        return hash_digest(encode(self.to_tree()))


def compute_block_hash(pb: ProposedBlock) -> Digest:
    return pb.digest


@dataclass(frozen=True)
class FinalisationProof:
    round: int
    commit_seals: Tuple[Signature, ...] = ()

    def to_tree(self) -> Tuple:
        return ("finalisation_proof", self.round, tuple(self.commit_seals))

    @classmethod
    def from_tree(cls, tree: Any) -> "FinalisationProof":
        tag, rnd, seals = tree
        if tag != "finalisation_proof":
            raise DecodeError(f"Expected finalisation_proof, got {tag!r}")
        return cls(rnd, tuple(seals))


@dataclass(frozen=True)
class FinalisedBlock:
    block: EthereumBlock
    proof: FinalisationProof

    def to_tree(self) -> Tuple:
        return ("finalised_block", self.block.to_tree(), self.proof.to_tree())

    @classmethod
    def from_tree(cls, tree: Any) -> "FinalisedBlock":
        tag, block, proof = tree
        if tag != "finalised_block":
            raise DecodeError(f"Expected finalised_block, got {tag!r}")
        return cls(EthereumBlock.from_tree(block), FinalisationProof.from_tree(proof))

    @property
    def height(self) -> int:
        return self.block.height


def make_genesis(validators: Collection[Address]) -> FinalisedBlock:
    """Genesis: height 0, zero parent, initial validator list in the payload."""
    block = EthereumBlock(
        parent_hash=ZERO_DIGEST,
        height=0,
        proposer=ZERO_ADDRESS,
        payload=encode(sorted(validators)),
    )
    return FinalisedBlock(block, FinalisationProof(0, ()))


def genesis_validators(genesis: EthereumBlock) -> Tuple[Address, ...]:
    return tuple(sorted(decode(genesis.payload)))


def is_valid_block(eb: EthereumBlock, parent: EthereumBlock) -> bool:
    """Structural validity of `eb` as the child of `parent`; never raises."""
    try:
        if eb.parent_hash != parent.hash:
            return False
        if eb.height != parent.height + 1:
            return False
        if not isinstance(eb.proposer, bytes) or len(eb.proposer) != ADDRESS_SIZE:
            return False
        if decode_transactions(eb.payload) is None:
            return False
        if eb.vote is not None:
            if not isinstance(eb.vote.action, VoteAction):
                return False
            if not isinstance(eb.vote.target, bytes) or len(eb.vote.target) != ADDRESS_SIZE:
                return False
        return True
    except Exception as e:
        logger.debug(f"Block validity check failed: {e}")
        return False


def is_valid_finalised_block(fb: FinalisedBlock, validator_set: Collection[Address]) -> bool:
    """
    A finalised block is valid iff it carries at least quorum(n) commit seals,
    each recovering to a distinct member of `validator_set` over
    hash((block, proof round)).
    """
    members = set(validator_set)
    if not members:
        return False
    seals = fb.proof.commit_seals
    if len(seals) < quorum(len(members)):
        return False

    digest = compute_block_hash(ProposedBlock(fb.block, fb.proof.round))
    signers = set()
    for seal in seals:
        signer = recover_address(digest, seal)
        if signer is None or signer not in members or signer in signers:
            return False
        signers.add(signer)
    return True


__all__ = [
    "EMPTY_PAYLOAD",
    "EthereumBlock",
    "FinalisationProof",
    "FinalisedBlock",
    "ProposedBlock",
    "Vote",
    "VoteAction",
    "compute_block_hash",
    "decode_transactions",
    "encode_transactions",
    "genesis_validators",
    "is_valid_block",
    "is_valid_finalised_block",
    "make_genesis",
    "max_byzantine",
    "quorum",
]
