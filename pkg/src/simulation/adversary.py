"""
Byzantine behaviour injection.

A Byzantine node runs the honest node logic; its outputs are then rewritten
by one or more strategies applied left to right. Strategies only ever sign
with the Byzantine node's own key.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from ..consensus.blocks import EthereumBlock, ProposedBlock, encode_transactions
from ..consensus.crypto import SIGNATURE_SIZE, Address, Digest, SecretKey, hash_digest, short_hex, sign
from ..consensus.errors import ConfigurationError
from ..consensus.instance import InstanceDecided, MulticastToValidators, StartTimer
from ..consensus.messages import (
    MessageKind, ProposalMessage, SignedPayload,
    make_commit, make_prepare, make_proposal, make_round_change,
)


logger = logging.getLogger(__name__)


class ByzantineStrategy(str, Enum):
    SILENT = "silent"
    EQUIVOCATE_PROPOSER = "equivocate_proposer"
    CONFLICTING_PREPARE = "conflicting_prepare"
    INVALID_SEALS = "invalid_seals"
    WITHHOLD_COMMIT = "withhold_commit"
    SCRIPTED = "scripted"

    @classmethod
    def parse(cls, value: str) -> "ByzantineStrategy":
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise ConfigurationError(f"Unknown Byzantine strategy: {value!r}") from None


@dataclass(frozen=True)
class ScriptEntry:
    """One scripted send: kind is prepare, commit or round_change."""

    time: int
    kind: str
    height: int
    round: int
    digest: Optional[Digest] = None
    recipients: Optional[Tuple[Address, ...]] = None


GARBAGE_SEAL = b"\xff" * SIGNATURE_SIZE


def split_halves(addresses: Iterable[Address]) -> Tuple[Tuple[Address, ...], Tuple[Address, ...]]:
    """Lower and upper half of the address-sorted set."""
    ordered = sorted(set(addresses))
    half = len(ordered) // 2
    return tuple(ordered[:half]), tuple(ordered[half:])


def fabricated_digest(digest: Digest) -> Digest:
    return hash_digest(b"conflicting|" + digest)


class Adversary:
    """
    Output rewriter for one Byzantine node.

    Args:
        secret_key: The Byzantine node's own key
        strategies: Strategies applied in order
        script: Scheduled sends for the SCRIPTED strategy
    """

    def __init__(
        self,
        secret_key: SecretKey,
        strategies: Sequence[ByzantineStrategy],
        script: Sequence[ScriptEntry] = (),
    ):
        if not strategies:
            raise ConfigurationError("A Byzantine node needs at least one strategy")
        self.secret_key = secret_key
        self.address = secret_key.address
        self.strategies = tuple(strategies)
        self.script = tuple(script)

        self._seen_digests: Dict[Tuple[int, int], List[Digest]] = {}
        self._prepared: Set[Tuple[int, int]] = set()
        self._prepared_digests: Set[Tuple[int, int, Digest]] = set()

    def __repr__(self) -> str:
        return f"Adversary({short_hex(self.address)}, {[s.value for s in self.strategies]})"

    def observe(self, message):
        if isinstance(message, ProposalMessage) and message.digest is not None:
            seen = self._seen_digests.setdefault((message.height, message.round), [])
            if message.digest not in seen:
                seen.append(message.digest)

    def rewrite(self, actions: List, node, trigger=None) -> List:
        handlers = {
            ByzantineStrategy.SILENT: self._silent,
            ByzantineStrategy.EQUIVOCATE_PROPOSER: self._equivocate_proposer,
            ByzantineStrategy.CONFLICTING_PREPARE: self._conflicting_prepare,
            ByzantineStrategy.INVALID_SEALS: self._invalid_seals,
            ByzantineStrategy.WITHHOLD_COMMIT: self._withhold_commit,
            ByzantineStrategy.SCRIPTED: self._scripted,
        }
        for strategy in self.strategies:
            actions = handlers[strategy](list(actions), node, trigger)
        return actions

    # -- strategies --------------------------------------------------------------

    def _silent(self, actions, node, trigger):
        return []

    def _equivocate_proposer(self, actions, node, trigger):
        result = []
        for action in actions:
            message = getattr(action, "message", None)
            if not (isinstance(action, MulticastToValidators) and isinstance(message, ProposalMessage)):
                result.append(action)
                continue
            lower, upper = split_halves(action.recipients + (self.address,))
            forged = self._forge_proposal(message)
            first = tuple(a for a in action.recipients if a in lower)
            second = tuple(a for a in action.recipients if a in upper)
            if first:
                result.append(MulticastToValidators(message, first))
            if second:
                result.append(MulticastToValidators(forged, second))
            logger.debug(
                f"{short_hex(self.address)} equivocating at h={message.height} r={message.round}: "
                f"{short_hex(message.digest)} / {short_hex(forged.digest)}"
            )
        return result

    def _forge_proposal(self, proposal: ProposalMessage) -> ProposalMessage:
        original = proposal.proposed_block.block
        marker = b"equivocation|" + proposal.digest
        block = EthereumBlock(
            parent_hash=original.parent_hash,
            height=original.height,
            proposer=original.proposer,
            payload=encode_transactions(list(original.transactions) + [marker]),
            vote=original.vote,
        )
        pb = ProposedBlock(block, proposal.proposed_block.round)
        return make_proposal(proposal.height, proposal.round, pb, proposal.round_change_certificate, self.secret_key)

    def _conflicting_prepare(self, actions, node, trigger):
        result = []
        for action in actions:
            message = getattr(action, "message", None)
            if not (
                isinstance(action, MulticastToValidators)
                and isinstance(message, SignedPayload)
                and message.kind is MessageKind.PREPARE
            ):
                result.append(action)
                continue

            key = (message.height, message.round)
            self._prepared.add(key)
            digests = list(self._seen_digests.get(key, []))
            if message.digest not in digests:
                digests.insert(0, message.digest)

            if len(digests) >= 2:
                for digest in digests:
                    result.append(self._prepare_action(key, digest, action.recipients))
            else:
                lower, upper = split_halves(action.recipients + (self.address,))
                self._prepared_digests.add(key + (message.digest,))
                first = tuple(a for a in action.recipients if a in lower)
                second = tuple(a for a in action.recipients if a in upper)
                if first:
                    result.append(MulticastToValidators(message, first))
                if second:
                    result.append(self._prepare_action(key, fabricated_digest(message.digest), second))

        # a conflicting proposal seen after preparing gets prepared too
        if isinstance(trigger, ProposalMessage):
            key = (trigger.height, trigger.round)
            if key in self._prepared and key + (trigger.digest,) not in self._prepared_digests:
                recipients = tuple(a for a in node.chain.validators_at(trigger.height) if a != self.address) \
                    if trigger.height <= node.next_height else ()
                if recipients:
                    result.append(self._prepare_action(key, trigger.digest, recipients))
        return result

    def _prepare_action(self, key: Tuple[int, int], digest: Digest, recipients: Tuple[Address, ...]):
        self._prepared_digests.add(key + (digest,))
        return MulticastToValidators(make_prepare(key[0], key[1], digest, self.secret_key), recipients)

    def _invalid_seals(self, actions, node, trigger):
        result = []
        for action in actions:
            message = getattr(action, "message", None)
            if (
                isinstance(action, MulticastToValidators)
                and isinstance(message, SignedPayload)
                and message.kind is MessageKind.COMMIT
            ):
                forged = make_commit(message.height, message.round, message.digest, GARBAGE_SEAL, self.secret_key)
                result.append(MulticastToValidators(forged, action.recipients))
            else:
                result.append(action)
        return result

    def _withhold_commit(self, actions, node, trigger):
        return [
            action for action in actions
            if not (
                isinstance(action, MulticastToValidators)
                and isinstance(action.message, SignedPayload)
                and action.message.kind is MessageKind.COMMIT
            )
        ]

    def _scripted(self, actions, node, trigger):
        return [a for a in actions if isinstance(a, (StartTimer, InstanceDecided))]

    # -- scripted sends ----------------------------------------------------------

    def script_times(self) -> List[int]:
        if ByzantineStrategy.SCRIPTED not in self.strategies:
            return []
        return [entry.time for entry in self.script]

    def scripted_actions(self, index: int, node) -> List:
        entry = self.script[index]
        recipients = entry.recipients
        if recipients is None:
            height = min(entry.height, node.next_height)
            recipients = tuple(a for a in node.chain.validators_at(height) if a != self.address)

        digest = entry.digest or hash_digest(b"scripted|%d|%d" % (entry.height, entry.round))
        if entry.kind == "prepare":
            message = make_prepare(entry.height, entry.round, digest, self.secret_key)
        elif entry.kind == "commit":
            message = make_commit(entry.height, entry.round, digest, sign(digest, self.secret_key), self.secret_key)
        elif entry.kind == "round_change":
            message = make_round_change(entry.height, entry.round, None, None, self.secret_key)
        else:
            raise ConfigurationError(f"Unknown scripted message kind: {entry.kind!r}")
        return [MulticastToValidators(message, tuple(recipients))]


__all__ = [
    "Adversary",
    "ByzantineStrategy",
    "GARBAGE_SEAL",
    "ScriptEntry",
    "fabricated_digest",
    "split_halves",
]
