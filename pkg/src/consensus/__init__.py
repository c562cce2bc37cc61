"""
Consensus package: block finalisation protocol for a proof-of-authority chain.
"""

from .blocks import (
    EthereumBlock,
    FinalisationProof,
    FinalisedBlock,
    ProposedBlock,
    Vote,
    VoteAction,
    compute_block_hash,
    is_valid_block,
    is_valid_finalised_block,
    make_genesis,
    max_byzantine,
    quorum,
)
from .chain import Chain, TransactionPool, VoteInstruction, VoteSchedule, create_new_proposed_block
from .crypto import SecretKey, address_of, hash_digest, key_gen, recover_address, sign
from .errors import (
    ChainAppendError,
    ConfigurationError,
    DecodeError,
    DomainError,
    MessageConstructionError,
    ScenarioError,
    UnboundedTerminationError,
)
from .instance import BlockFinalisationInstance, InstanceConfig, round_timer_timeout, valid_pc
from .messages import (
    MessageKind,
    make_commit,
    make_prepare,
    make_proposal,
    make_round_change,
    sender_of,
)
from .node import ConsensusNode, NodeConfig, SendTo
from .proposer import ProposerMode, ProposerSelection, select_proposer, validators
from .voting import ValidatorSet, VoteTally, apply_block_vote, fold_validators

__all__ = [
    "BlockFinalisationInstance",
    "Chain",
    "ChainAppendError",
    "ConfigurationError",
    "ConsensusNode",
    "DecodeError",
    "DomainError",
    "EthereumBlock",
    "FinalisationProof",
    "FinalisedBlock",
    "InstanceConfig",
    "MessageConstructionError",
    "MessageKind",
    "NodeConfig",
    "ProposedBlock",
    "ProposerMode",
    "ProposerSelection",
    "ScenarioError",
    "SecretKey",
    "SendTo",
    "TransactionPool",
    "UnboundedTerminationError",
    "ValidatorSet",
    "Vote",
    "VoteAction",
    "VoteInstruction",
    "VoteSchedule",
    "VoteTally",
    "address_of",
    "apply_block_vote",
    "compute_block_hash",
    "create_new_proposed_block",
    "fold_validators",
    "hash_digest",
    "is_valid_block",
    "is_valid_finalised_block",
    "key_gen",
    "make_commit",
    "make_genesis",
    "make_prepare",
    "make_proposal",
    "make_round_change",
    "max_byzantine",
    "quorum",
    "recover_address",
    "round_timer_timeout",
    "select_proposer",
    "sender_of",
    "sign",
    "valid_pc",
    "validators",
]
