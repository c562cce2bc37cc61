"""
Consensus messages.

Four signed kinds (PROPOSAL, PREPARE, COMMIT, ROUND_CHANGE) share one
SignedPayload envelope. A Proposal piggybacks the proposed block and the
round-change certificate outside the signature; a Round-Change carries its
prepared certificate inside the signature and its prepared block outside.
FINALISED-BLOCK and GET-BLOCKS model block sync between nodes and are unsigned.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
from typing import Any, Dict, Iterable, Optional, Tuple, Union

from .blocks import FinalisedBlock, ProposedBlock
from .crypto import (
    Address, Digest, SecretKey, Signature,
    decode, encode, hash_digest, recover_address, short_hex, sign,
)
from .errors import DecodeError, MessageConstructionError


logger = logging.getLogger(__name__)


class MessageKind(str, Enum):
    PROPOSAL = "PROPOSAL"
    PREPARE = "PREPARE"
    COMMIT = "COMMIT"
    ROUND_CHANGE = "ROUND_CHANGE"


@dataclass(frozen=True)
class SignedPayload:
    kind: MessageKind
    height: int
    round: int
    digest: Optional[Digest] = None
    commit_seal: Optional[Signature] = None
    prepared_certificate: Optional["PreparedCertificate"] = None
    signature: Signature = b""

    def unsigned_tree(self) -> Tuple:
        return (
            "signed_payload",
            self.kind.value,
            self.height,
            self.round,
            self.digest,
            self.commit_seal,
            self.prepared_certificate.to_tree() if self.prepared_certificate else None,
        )

    def to_tree(self) -> Tuple:
        return self.unsigned_tree() + (self.signature,)

    @classmethod
    def from_tree(cls, tree: Any) -> "SignedPayload":
        tag, kind, height, rnd, digest, seal, pc, signature = tree
        if tag != "signed_payload":
            raise DecodeError(f"Expected signed_payload, got {tag!r}")
        return cls(
            kind=MessageKind(kind),
            height=height,
            round=rnd,
            digest=digest,
            commit_seal=seal,
            prepared_certificate=PreparedCertificate.from_tree(pc) if pc else None,
            signature=signature,
        )

    @cached_property
    def signing_digest(self) -> Digest:
        return hash_digest(encode(self.unsigned_tree()))

    @cached_property
    def sender(self) -> Optional[Address]:
        return recover_address(self.signing_digest, self.signature)

    @cached_property
    def encoded(self) -> bytes:
        return encode(self.to_tree())

    @property
    def signed(self) -> "SignedPayload":
        return self


@dataclass(frozen=True)
class PreparedCertificate:
    """One PROPOSAL signed portion plus PREPAREs; validated only by valid_pc."""

    messages: Tuple[SignedPayload, ...] = ()

    @classmethod
    def of(cls, messages: Iterable[SignedPayload]) -> "PreparedCertificate":
        unique = {m.encoded: m for m in messages}
        return cls(tuple(unique[k] for k in sorted(unique)))

    def to_tree(self) -> Tuple:
        return ("prepared_certificate", tuple(m.to_tree() for m in self.messages))

    @classmethod
    def from_tree(cls, tree: Any) -> "PreparedCertificate":
        tag, messages = tree
        if tag != "prepared_certificate":
            raise DecodeError(f"Expected prepared_certificate, got {tag!r}")
        return cls(tuple(SignedPayload.from_tree(m) for m in messages))

    def __len__(self) -> int:
        return len(self.messages)

    def __bool__(self) -> bool:
        return bool(self.messages)


@dataclass(frozen=True)
class RoundChangeCertificate:
    """ROUND_CHANGE signed portions justifying a Proposal for a round above 0."""

    messages: Tuple[SignedPayload, ...] = ()

    def to_tree(self) -> Tuple:
        return ("round_change_certificate", tuple(m.to_tree() for m in self.messages))

    @classmethod
    def from_tree(cls, tree: Any) -> "RoundChangeCertificate":
        tag, messages = tree
        if tag != "round_change_certificate":
            raise DecodeError(f"Expected round_change_certificate, got {tag!r}")
        return cls(tuple(SignedPayload.from_tree(m) for m in messages))

    def __len__(self) -> int:
        return len(self.messages)

    def __bool__(self) -> bool:
        return bool(self.messages)


@dataclass(frozen=True)
class ProposalMessage:
    signed: SignedPayload
    proposed_block: ProposedBlock
    round_change_certificate: Optional[RoundChangeCertificate] = None

    kind = MessageKind.PROPOSAL

    @property
    def height(self) -> int:
        return self.signed.height

    @property
    def round(self) -> int:
        return self.signed.round

    @property
    def digest(self) -> Optional[Digest]:
        return self.signed.digest

    @property
    def sender(self) -> Optional[Address]:
        return self.signed.sender

    def to_tree(self) -> Tuple:
        rcc = self.round_change_certificate
        return ("proposal", self.signed.to_tree(), self.proposed_block.to_tree(), rcc.to_tree() if rcc else None)

    @cached_property
    def encoded(self) -> bytes:
        return encode(self.to_tree())


@dataclass(frozen=True)
class RoundChangeMessage:
    signed: SignedPayload
    latest_prepared_block: Optional[ProposedBlock] = None

    kind = MessageKind.ROUND_CHANGE

    @property
    def height(self) -> int:
        return self.signed.height

    @property
    def round(self) -> int:
        return self.signed.round

    @property
    def prepared_certificate(self) -> Optional[PreparedCertificate]:
        return self.signed.prepared_certificate

    @property
    def sender(self) -> Optional[Address]:
        return self.signed.sender

    def to_tree(self) -> Tuple:
        pb = self.latest_prepared_block
        return ("round_change", self.signed.to_tree(), pb.to_tree() if pb else None)

    @cached_property
    def encoded(self) -> bytes:
        return encode(self.to_tree())


@dataclass(frozen=True)
class FinalisedBlockMessage:
    block: FinalisedBlock

    kind = "FINALISED_BLOCK"

    @property
    def height(self) -> int:
        return self.block.height

    def to_tree(self) -> Tuple:
        return ("finalised_block_message", self.block.to_tree())

    @cached_property
    def encoded(self) -> bytes:
        return encode(self.to_tree())


@dataclass(frozen=True)
class GetBlocksMessage:
    lo: int
    hi: int

    kind = "GET_BLOCKS"

    def to_tree(self) -> Tuple:
        return ("get_blocks", self.lo, self.hi)

    @cached_property
    def encoded(self) -> bytes:
        return encode(self.to_tree())


ConsensusMessage = Union[ProposalMessage, SignedPayload, RoundChangeMessage]
Message = Union[ConsensusMessage, FinalisedBlockMessage, GetBlocksMessage]


# =============================================================================
# Builders
# =============================================================================

def _signed(
    kind: MessageKind,
    height: int,
    rnd: int,
    sk: SecretKey,
    digest: Optional[Digest] = None,
    commit_seal: Optional[Signature] = None,
    prepared_certificate: Optional[PreparedCertificate] = None,
) -> SignedPayload:
    if height < 1:
        raise MessageConstructionError(f"Consensus messages need height >= 1, got {height}")
    if rnd < 0:
        raise MessageConstructionError(f"Round must be non-negative, got {rnd}")
    unsigned = SignedPayload(kind, height, rnd, digest, commit_seal, prepared_certificate or None)
    return replace(unsigned, signature=sign(unsigned.signing_digest, sk))


def make_proposal(
    height: int,
    rnd: int,
    pb: ProposedBlock,
    rcc: Optional[RoundChangeCertificate],
    sk: SecretKey,
) -> ProposalMessage:
    """
    Raises:
        MessageConstructionError: round 0 with a non-empty certificate
    """
    if rnd == 0 and rcc:
        raise MessageConstructionError("A round-0 Proposal cannot carry a round-change certificate")
    signed = _signed(MessageKind.PROPOSAL, height, rnd, sk, digest=pb.digest)
    return ProposalMessage(signed, pb, rcc or None)


def make_prepare(height: int, rnd: int, digest: Digest, sk: SecretKey) -> SignedPayload:
    return _signed(MessageKind.PREPARE, height, rnd, sk, digest=digest)


def make_commit(height: int, rnd: int, digest: Digest, seal: Signature, sk: SecretKey) -> SignedPayload:
    return _signed(MessageKind.COMMIT, height, rnd, sk, digest=digest, commit_seal=seal)


def make_round_change(
    height: int,
    rnd: int,
    latest_pc: Optional[PreparedCertificate],
    latest_prepared_block: Optional[ProposedBlock],
    sk: SecretKey,
) -> RoundChangeMessage:
    signed = _signed(MessageKind.ROUND_CHANGE, height, rnd, sk, prepared_certificate=latest_pc)
    return RoundChangeMessage(signed, latest_prepared_block)


def sender_of(payload: Union[SignedPayload, ProposalMessage, RoundChangeMessage]) -> Optional[Address]:
    """Recovered signer, or None for an unknown sender."""
    return payload.signed.sender


def signed_portion(message: ConsensusMessage) -> SignedPayload:
    return message.signed


# =============================================================================
# Wire form
# =============================================================================

def encode_message(message: Message) -> bytes:
    return message.encoded


def decode_message(data: bytes) -> Message:
    """
    Raises:
        DecodeError: malformed bytes or an unknown message tag
    """
    tree = decode(data)
    try:
        tag = tree[0]
        if tag == "signed_payload":
            return SignedPayload.from_tree(tree)
        if tag == "proposal":
            _, signed, pb, rcc = tree
            return ProposalMessage(
                SignedPayload.from_tree(signed),
                ProposedBlock.from_tree(pb),
                RoundChangeCertificate.from_tree(rcc) if rcc else None,
            )
        if tag == "round_change":
            _, signed, pb = tree
            return RoundChangeMessage(SignedPayload.from_tree(signed), ProposedBlock.from_tree(pb) if pb else None)
        if tag == "finalised_block_message":
            return FinalisedBlockMessage(FinalisedBlock.from_tree(tree[1]))
        if tag == "get_blocks":
            _, lo, hi = tree
            return GetBlocksMessage(lo, hi)
    except DecodeError:
        raise
    except (TypeError, ValueError, IndexError) as e:
        raise DecodeError(f"Malformed message tree: {e}") from e
    raise DecodeError(f"Unknown message tag {tag!r}")


def summarise(message: Message) -> Dict[str, Any]:
    """Human-readable rendering used in traces."""
    if isinstance(message, FinalisedBlockMessage):
        return {
            "kind": message.kind,
            "height": message.height,
            "round": message.block.proof.round,
            "digest": short_hex(message.block.block.hash),
            "seals": len(message.block.proof.commit_seals),
        }
    if isinstance(message, GetBlocksMessage):
        return {"kind": message.kind, "lo": message.lo, "hi": message.hi}

    signed = message.signed
    summary = {
        "kind": signed.kind.value,
        "height": signed.height,
        "round": signed.round,
        "digest": short_hex(signed.digest),
        "sender": short_hex(signed.sender),
    }
    if isinstance(message, ProposalMessage):
        summary["rcc"] = len(message.round_change_certificate or ())
    elif isinstance(message, RoundChangeMessage):
        summary["pc"] = len(signed.prepared_certificate or ())
    return summary


__all__ = [
    "ConsensusMessage",
    "FinalisedBlockMessage",
    "GetBlocksMessage",
    "Message",
    "MessageKind",
    "PreparedCertificate",
    "ProposalMessage",
    "RoundChangeCertificate",
    "RoundChangeMessage",
    "SignedPayload",
    "decode_message",
    "encode_message",
    "make_commit",
    "make_prepare",
    "make_proposal",
    "make_round_change",
    "sender_of",
    "signed_portion",
    "summarise",
]
