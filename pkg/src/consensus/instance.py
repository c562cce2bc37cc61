"""
Block finalisation instance.

One BlockFinalisationInstance runs the h-th instance of the protocol for one
validator. It is an event-driven state machine: every input (start, received
message, timer expiry) returns the list of output actions it produced. The
instance owns no clock; time enters only through timer expiries.

After each input the upon-rules are re-evaluated until none makes progress,
in this order: round-change fast-forward (optional), round-change quorum,
proposal for a round above 0, proposal for round 0, prepare quorum, commit
quorum. Multicasts are delivered to the instance itself before any network
send.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Set, Tuple, Union

from .blocks import (
    EthereumBlock, FinalisationProof, FinalisedBlock, ProposedBlock,
    is_valid_block, max_byzantine, quorum,
)
from .chain import Chain, create_new_proposed_block
from .crypto import Address, Digest, SecretKey, recover_address, short_hex, sign
from .errors import ConfigurationError
from .messages import (
    ConsensusMessage, FinalisedBlockMessage, MessageKind, PreparedCertificate,
    ProposalMessage, RoundChangeCertificate, RoundChangeMessage, SignedPayload,
    make_commit, make_prepare, make_proposal, make_round_change, summarise,
)
from .proposer import ProposerMode, select_proposer, validators
from .voting import ValidatorSet


logger = logging.getLogger(__name__)

# Simulation time is an integer tick count held in a signed 64-bit field.
MAX_TICKS = 2 ** 63 - 1


def round_timer_timeout(r: int, base: int) -> int:
    """
    base * 2^r.

    Raises:
        ConfigurationError: negative round or base, or a duration beyond MAX_TICKS
    """
    if r < 0 or base <= 0:
        raise ConfigurationError(f"Invalid timer request: round={r}, base={base}")
    duration = base << r
    if duration > MAX_TICKS:
        raise ConfigurationError(f"Round {r} timeout overflows the simulation clock (base={base})")
    return duration


# =============================================================================
# Output actions
# =============================================================================

@dataclass(frozen=True)
class MulticastToValidators:
    message: ConsensusMessage
    recipients: Tuple[Address, ...]

    def to_record(self) -> Dict:
        return {"action": "multicast", "message": summarise(self.message), "recipients": len(self.recipients)}


@dataclass(frozen=True)
class BroadcastToAll:
    message: FinalisedBlockMessage

    def to_record(self) -> Dict:
        return {"action": "broadcast", "message": summarise(self.message)}


@dataclass(frozen=True)
class StartTimer:
    height: int
    round: int
    duration: int

    def to_record(self) -> Dict:
        return {"action": "start_timer", "height": self.height, "round": self.round, "duration": self.duration}


@dataclass(frozen=True)
class InstanceDecided:
    block: FinalisedBlock

    def to_record(self) -> Dict:
        return {
            "action": "decided",
            "height": self.block.height,
            "round": self.block.proof.round,
            "digest": short_hex(self.block.block.hash),
        }


OutputAction = Union[MulticastToValidators, BroadcastToAll, StartTimer, InstanceDecided]


@dataclass(frozen=True)
class InstanceConfig:
    base_timeout: int = 1000
    proposer_mode: ProposerMode = field(default_factory=ProposerMode)
    fast_forward: bool = False


@dataclass(frozen=True)
class RoundChangeCandidate:
    round: int
    messages: Tuple[RoundChangeMessage, ...]

    @property
    def certificate(self) -> RoundChangeCertificate:
        return RoundChangeCertificate(tuple(m.signed for m in self.messages))


# =============================================================================
# Prepared-certificate validation
# =============================================================================

def valid_pc(
    pc: Optional[PreparedCertificate],
    r_limit: int,
    height: int,
    validator_set: ValidatorSet,
    proposer_fn: Callable[[int], Address],
) -> bool:
    """
    True iff `pc` is empty, or it holds at least quorum(n) messages from
    distinct senders: exactly one PROPOSAL by proposer_fn(r') and PREPAREs by
    other validators, all for (height, r', same digest) with r' < r_limit.
    """
    if not pc:
        return True
    try:
        messages = pc.messages
        if len(messages) < validator_set.quorum:
            return False

        proposals = [m for m in messages if m.kind is MessageKind.PROPOSAL]
        prepares = [m for m in messages if m.kind is MessageKind.PREPARE]
        if len(proposals) != 1 or len(prepares) != len(messages) - 1:
            return False

        senders = [m.sender for m in messages]
        if None in senders or len(set(senders)) != len(senders):
            return False

        proposal = proposals[0]
        r_pc, digest = proposal.round, proposal.digest
        if digest is None or r_pc >= r_limit:
            return False
        if any(m.height != height or m.round != r_pc or m.digest != digest for m in messages):
            return False

        round_proposer = proposer_fn(r_pc)
        if proposal.sender != round_proposer:
            return False
        return all(m.sender in validator_set and m.sender != round_proposer for m in prepares)
    except Exception as e:
        logger.debug(f"Prepared certificate rejected: {e}")
        return False


def prepared_digest(pc: Optional[PreparedCertificate]) -> Optional[Tuple[Digest, int]]:
    """(digest, round) of a non-empty certificate's proposal."""
    if not pc:
        return None
    for m in pc.messages:
        if m.kind is MessageKind.PROPOSAL:
            return m.digest, m.round
    return None


# =============================================================================
# Instance
# =============================================================================

BlockFactory = Callable[[int, Address, Chain], EthereumBlock]


class BlockFinalisationInstance:
    """
    The h-th block finalisation instance of one validator.

    Args:
        height: Instance height h
        chain: Chain prefix holding blocks 0..h-1
        secret_key: Key of the validator running the instance
        config: Timer base, proposer mode and fast-forward switch
        block_factory: Builds a fresh block at (height, proposer, chain)
    """

    def __init__(
        self,
        height: int,
        chain: Chain,
        secret_key: SecretKey,
        config: InstanceConfig = InstanceConfig(),
        block_factory: Optional[BlockFactory] = None,
    ):
        if chain.next_height != height:
            raise ValueError(f"Instance {height} needs a chain prefix of {height} blocks, got {len(chain)}")

        self.height = height
        self.chain = chain
        self.secret_key = secret_key
        self.address = secret_key.address
        self.config = config
        self.block_factory = block_factory or (lambda h, proposer, c: create_new_proposed_block(h, proposer, c))

        self.validator_set = validators(chain)
        self.n = len(self.validator_set)
        self.quorum = quorum(self.n)
        self.f = max_byzantine(self.n)
        self.parent = chain.tip.block

        self.current_round = 0
        self.accepted_pb: Optional[ProposedBlock] = None
        self.accepted_proposal: Optional[ProposalMessage] = None
        self.latest_pc: Optional[PreparedCertificate] = None
        self.latest_prepared_block: Optional[ProposedBlock] = None
        self.commit_sent = False
        self.finalised_block_sent = False
        self.started = False
        self.decided: Optional[FinalisedBlock] = None

        self.received: Dict[bytes, ConsensusMessage] = {}
        self.active_timers: Set[int] = set()

        # Indexes over received messages from recoverable senders
        self._proposals: Dict[int, List[ProposalMessage]] = {}
        self._proposal_checks: Dict[bytes, bool] = {}
        self._prepares: Dict[Tuple[int, Digest], Dict[Address, SignedPayload]] = {}
        self._commits: Dict[Tuple[int, Digest], Dict[Address, SignedPayload]] = {}
        self._round_changes: Dict[int, Dict[Address, RoundChangeMessage]] = {}
        self._round_change_rounds: Dict[Address, Set[int]] = {}
        self._proposers: Dict[int, Address] = {}

        self._outputs: List[OutputAction] = []

    # -- helpers ---------------------------------------------------------------

    def proposer(self, r: int) -> Address:
        if r not in self._proposers:
            self._proposers[r] = select_proposer(self.chain, r, self.config.proposer_mode)
        return self._proposers[r]

    def is_proposer(self, r: int) -> bool:
        return self.proposer(r) == self.address

    def _multicast(self, message: ConsensusMessage):
        recipients = tuple(a for a in self.validator_set if a != self.address)
        self._store(message)
        self._outputs.append(MulticastToValidators(message, recipients))

    def _flush(self) -> List[OutputAction]:
        outputs, self._outputs = self._outputs, []
        return outputs

    def _start_new_round(self, r: int):
        if not (r == 0 or r > self.current_round):
            return
        self.current_round = r
        self.accepted_pb = None
        self.accepted_proposal = None
        self.commit_sent = False
        self.finalised_block_sent = False
        if r not in self.active_timers:
            self.active_timers.add(r)
            self._outputs.append(StartTimer(self.height, r, round_timer_timeout(r, self.config.base_timeout)))
        logger.debug(f"{short_hex(self.address)} h={self.height} entered round {r}")

    def _propose(self, r: int, block: EthereumBlock, rcc: Optional[RoundChangeCertificate]):
        pb = ProposedBlock(block, r)
        proposal = make_proposal(self.height, r, pb, rcc, self.secret_key)
        self.accepted_pb = pb
        self.accepted_proposal = proposal
        self._multicast(proposal)
        logger.debug(f"{short_hex(self.address)} h={self.height} r={r} proposed {short_hex(pb.digest)}")

    def _accept(self, proposal: ProposalMessage):
        self.accepted_pb = proposal.proposed_block
        self.accepted_proposal = proposal
        self._multicast(make_prepare(self.height, proposal.round, proposal.digest, self.secret_key))
        logger.debug(
            f"{short_hex(self.address)} h={self.height} r={proposal.round} "
            f"accepted {short_hex(proposal.digest)}"
        )

    # -- message storage -------------------------------------------------------

    def _store(self, message: ConsensusMessage) -> bool:
        key = message.encoded
        if key in self.received:
            return False
        self.received[key] = message

        signed = message.signed
        sender = signed.sender
        if sender is None or signed.height != self.height:
            return True

        if isinstance(message, ProposalMessage):
            if signed.kind is MessageKind.PROPOSAL:
                self._proposals.setdefault(signed.round, []).append(message)
        elif isinstance(message, RoundChangeMessage):
            if signed.kind is MessageKind.ROUND_CHANGE:
                self._round_change_rounds.setdefault(sender, set()).add(signed.round)
                if self._valid_round_change(message):
                    self._round_changes.setdefault(signed.round, {}).setdefault(sender, message)
        elif signed.kind is MessageKind.PREPARE and signed.digest is not None:
            self._prepares.setdefault((signed.round, signed.digest), {}).setdefault(sender, signed)
        elif signed.kind is MessageKind.COMMIT and signed.digest is not None:
            if recover_address(signed.digest, signed.commit_seal or b"") == sender:
                self._commits.setdefault((signed.round, signed.digest), {}).setdefault(sender, signed)
        return True

    def _valid_round_change(self, message: RoundChangeMessage) -> bool:
        """Validity of a ROUND_CHANGE as a certificate member for its own round."""
        pc = message.prepared_certificate
        if not valid_pc(pc, message.round, self.height, self.validator_set, self.proposer):
            return False
        if pc:
            pb = message.latest_prepared_block
            if pb is None or prepared_digest(pc)[0] != pb.digest:
                return False
        return True

    # -- inputs ----------------------------------------------------------------

    def start(self) -> List[OutputAction]:
        """Start round 0; the round-0 proposer proposes a fresh block."""
        if self.started:
            return []
        self.started = True
        self._start_new_round(0)
        if self.is_proposer(0):
            self._propose(0, self.block_factory(self.height, self.address, self.chain), None)
        self._evaluate()
        return self._flush()

    def on_message(self, message: ConsensusMessage) -> List[OutputAction]:
        if message.height != self.height:
            return []
        if not self._store(message):
            return []
        self._evaluate()
        return self._flush()

    def on_round_timer_expiry(self, r: int) -> List[OutputAction]:
        """Move to round r+1 and multicast a ROUND_CHANGE; stale timers are ignored."""
        self.active_timers.discard(r)
        if r != self.current_round:
            return []
        self._start_new_round(r + 1)
        self._multicast(make_round_change(
            self.height, r + 1, self.latest_pc, self.latest_prepared_block, self.secret_key
        ))
        self._evaluate()
        return self._flush()

    # -- upon rules --------------------------------------------------------------

    def _evaluate(self):
        rules = (
            self._rule_fast_forward,
            self._rule_round_change_quorum,
            self._rule_proposal_round_gt_zero,
            self._rule_proposal_round_zero,
            self._rule_prepare_quorum,
            self._rule_commit_quorum,
        )
        progress = True
        while progress:
            progress = any(rule() for rule in rules)

    def _rule_fast_forward(self) -> bool:
        if not self.config.fast_forward:
            return False
        target = self.fast_forward_round()
        if target is None:
            return False
        self._start_new_round(target)
        self._multicast(make_round_change(
            self.height, target, self.latest_pc, self.latest_prepared_block, self.secret_key
        ))
        logger.debug(f"{short_hex(self.address)} h={self.height} fast-forwarded to round {target}")
        return True

    def fast_forward_round(self) -> Optional[int]:
        """Lowest round above the current one once f(n)+1 validators sent ROUND_CHANGEs above it."""
        ahead = {
            sender: {r for r in rounds if r > self.current_round}
            for sender, rounds in self._round_change_rounds.items()
            if sender in self.validator_set
        }
        ahead = {sender: rounds for sender, rounds in ahead.items() if rounds}
        if len(ahead) < self.f + 1:
            return None
        return min(min(rounds) for rounds in ahead.values())

    def _rule_round_change_quorum(self) -> bool:
        candidate = self.collect_round_change_certificate()
        if candidate is None:
            return False
        r_rc = candidate.round
        advanced = r_rc > self.current_round
        if advanced:
            self._start_new_round(r_rc)
        if self.is_proposer(r_rc) and self.accepted_pb is None:
            self._propose(r_rc, self._block_for_round_change(candidate), candidate.certificate)
            return True
        return advanced

    def _block_for_round_change(self, candidate: RoundChangeCandidate) -> EthereumBlock:
        prepared = [m for m in candidate.messages if m.prepared_certificate]
        if not prepared:
            return self.block_factory(self.height, self.address, self.chain)
        best_round = max(prepared_digest(m.prepared_certificate)[1] for m in prepared)
        chosen = min(
            (m for m in prepared if prepared_digest(m.prepared_certificate)[1] == best_round),
            key=lambda m: m.sender,
        )
        return chosen.latest_prepared_block.block

    def collect_round_change_certificate(self) -> Optional[RoundChangeCandidate]:
        """Certificate for the highest eligible round, members by ascending sender."""
        for r in sorted(self._round_changes, reverse=True):
            if r < self.current_round:
                break
            if r == self.current_round and self.accepted_pb is not None:
                continue
            by_sender = self._round_changes[r]
            senders = sorted(s for s in by_sender if s in self.validator_set)
            if len(senders) >= self.quorum:
                return RoundChangeCandidate(r, tuple(by_sender[s] for s in senders[: self.quorum]))
        return None

    def round_change_quorum_rounds(self) -> List[int]:
        """Every round holding a quorum of valid ROUND_CHANGEs, regardless of the current round."""
        return sorted(
            r for r, by_sender in self._round_changes.items()
            if sum(1 for s in by_sender if s in self.validator_set) >= self.quorum
        )

    def _rule_proposal_round_gt_zero(self) -> bool:
        for r in sorted(self._proposals, reverse=True):
            if r == 0 or r < self.current_round:
                break
            if r == self.current_round and self.accepted_pb is not None:
                continue
            for proposal in self._proposals[r]:
                if self._check_proposal_round_gt_zero(proposal):
                    self._start_new_round(r)
                    self._accept(proposal)
                    return True
        return False

    def _check_proposal_round_gt_zero(self, proposal: ProposalMessage) -> bool:
        key = proposal.encoded
        if key not in self._proposal_checks:
            self._proposal_checks[key] = self._validate_proposal_round_gt_zero(proposal)
        return self._proposal_checks[key]

    def _validate_proposal_round_gt_zero(self, proposal: ProposalMessage) -> bool:
        r = proposal.round
        pb = proposal.proposed_block
        if proposal.sender != self.proposer(r) or self.is_proposer(r):
            return False
        if proposal.digest != pb.digest:
            return False

        rcc = proposal.round_change_certificate
        if not rcc or len(rcc) < self.quorum:
            return False
        senders = set()
        prepared: List[Tuple[int, Address, Digest]] = []
        for member in rcc.messages:
            if member.kind is not MessageKind.ROUND_CHANGE or member.height != self.height or member.round != r:
                return False
            sender = member.sender
            if sender is None or sender not in self.validator_set or sender in senders:
                return False
            senders.add(sender)
            pc = member.prepared_certificate
            if pc and valid_pc(pc, r, self.height, self.validator_set, self.proposer):
                digest, pc_round = prepared_digest(pc)
                prepared.append((pc_round, sender, digest))

        if pb.round != r:
            return False
        if not prepared:
            return is_valid_block(pb.block, self.parent)
        max_round = max(entry[0] for entry in prepared)
        expected = min(entry for entry in prepared if entry[0] == max_round)[2]
        return ProposedBlock(pb.block, max_round).digest == expected

    def _rule_proposal_round_zero(self) -> bool:
        if self.current_round != 0 or self.accepted_pb is not None or self.is_proposer(0):
            return False
        for proposal in self._proposals.get(0, ()):
            if self._validate_proposal_round_zero(proposal):
                self._accept(proposal)
                return True
        return False

    def _validate_proposal_round_zero(self, proposal: ProposalMessage) -> bool:
        pb = proposal.proposed_block
        return (
            pb.round == 0
            and not proposal.round_change_certificate
            and proposal.sender == self.proposer(0)
            and proposal.digest == pb.digest
            and is_valid_block(pb.block, self.parent)
        )

    def valid_prepare_messages(self) -> List[SignedPayload]:
        if self.accepted_pb is None:
            return []
        r = self.current_round
        round_proposer = self.proposer(r)
        by_sender = self._prepares.get((r, self.accepted_pb.digest), {})
        return [
            by_sender[s] for s in sorted(by_sender)
            if s in self.validator_set and s != round_proposer
        ]

    def valid_commit_messages(self) -> List[SignedPayload]:
        if self.accepted_pb is None:
            return []
        by_sender = self._commits.get((self.current_round, self.accepted_pb.digest), {})
        return [by_sender[s] for s in sorted(by_sender) if s in self.validator_set]

    def _rule_prepare_quorum(self) -> bool:
        if self.accepted_pb is None or self.commit_sent:
            return False
        prepares = self.valid_prepare_messages()
        if len(prepares) < self.quorum - 1:
            return False

        digest = self.accepted_pb.digest
        self.commit_sent = True
        self.latest_pc = PreparedCertificate.of([self.accepted_proposal.signed] + prepares)
        self.latest_prepared_block = self.accepted_pb
        self._multicast(make_commit(
            self.height, self.current_round, digest, sign(digest, self.secret_key), self.secret_key
        ))
        logger.debug(f"{short_hex(self.address)} h={self.height} r={self.current_round} prepared")
        return True

    def _rule_commit_quorum(self) -> bool:
        if self.accepted_pb is None or self.finalised_block_sent:
            return False
        commits = self.valid_commit_messages()
        if len(commits) < self.quorum:
            return False

        proof = FinalisationProof(self.current_round, tuple(c.commit_seal for c in commits))
        fb = FinalisedBlock(self.accepted_pb.block, proof)
        self.finalised_block_sent = True
        self.decided = fb
        self._outputs.append(BroadcastToAll(FinalisedBlockMessage(fb)))
        self._outputs.append(InstanceDecided(fb))
        logger.debug(
            f"{short_hex(self.address)} h={self.height} decided {short_hex(fb.block.hash)} "
            f"at round {self.current_round} with {len(commits)} seals"
        )
        return True

    def __repr__(self) -> str:
        return (
            f"BlockFinalisationInstance(h={self.height}, node={short_hex(self.address)}, "
            f"round={self.current_round}, accepted={short_hex(self.accepted_pb.digest) if self.accepted_pb else None})"
        )


def start_instance(
    height: int,
    chain: Chain,
    secret_key: SecretKey,
    config: InstanceConfig = InstanceConfig(),
    block_factory: Optional[BlockFactory] = None,
) -> Tuple[BlockFinalisationInstance, List[OutputAction]]:
    instance = BlockFinalisationInstance(height, chain, secret_key, config, block_factory)
    return instance, instance.start()


__all__ = [
    "BlockFinalisationInstance",
    "BroadcastToAll",
    "InstanceConfig",
    "InstanceDecided",
    "MAX_TICKS",
    "MulticastToValidators",
    "OutputAction",
    "RoundChangeCandidate",
    "StartTimer",
    "prepared_digest",
    "round_timer_timeout",
    "start_instance",
    "valid_pc",
]
