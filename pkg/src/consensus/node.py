"""
Node: chain-height management around block finalisation instances.

A node keeps its chain, runs the instance for the next height while it is a
validator for that height, ingests finalised blocks (its own decisions and
peers' broadcasts) and asks a peer for the blocks it is missing with
GET-BLOCKS once that peer shows consensus traffic for a higher height.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Union

from .blocks import FinalisedBlock
from .chain import Chain, TransactionPool, VoteSchedule, create_new_proposed_block
from .crypto import Address, SecretKey, short_hex
from .errors import ChainAppendError
from .instance import BlockFinalisationInstance, InstanceConfig, InstanceDecided, OutputAction
from .messages import ConsensusMessage, FinalisedBlockMessage, GetBlocksMessage, Message, summarise


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SendTo:
    peer: Address
    message: Union[FinalisedBlockMessage, GetBlocksMessage]

    def to_record(self) -> Dict:
        return {"action": "send", "peer": short_hex(self.peer), "message": summarise(self.message)}


NodeAction = Union[OutputAction, SendTo]


@dataclass(frozen=True)
class NodeConfig:
    instance: InstanceConfig = field(default_factory=InstanceConfig)
    future_buffer_window: int = 64
    block_capacity: int = 16


class ConsensusNode:
    """
    One simulated node (validator or standard).

    Args:
        secret_key: The node's signing key
        genesis: Genesis finalised block shared by every node
        config: Instance settings, buffer window and block capacity
        transactions: Initial transaction pool contents
        vote_schedule: Votes this node casts when it proposes
    """

    def __init__(
        self,
        secret_key: SecretKey,
        genesis: FinalisedBlock,
        config: NodeConfig = NodeConfig(),
        transactions: Iterable[bytes] = (),
        vote_schedule: Optional[VoteSchedule] = None,
    ):
        self.secret_key = secret_key
        self.address = secret_key.address
        self.config = config
        self.chain = Chain.from_genesis(genesis)
        self.tx_pool = TransactionPool(transactions)
        self.vote_schedule = vote_schedule or VoteSchedule()

        self.expected_height: Dict[Address, int] = {}
        self.instance: Optional[BlockFinalisationInstance] = None
        self.future_blocks: Dict[int, FinalisedBlock] = {}
        self.future_messages: Dict[int, List[ConsensusMessage]] = {}
        self.rejected_blocks = 0

    @property
    def next_height(self) -> int:
        return self.chain.next_height

    @property
    def is_validator(self) -> bool:
        return self.address in self.chain.validators_at(self.next_height)

    def __repr__(self) -> str:
        return f"ConsensusNode({short_hex(self.address)}, height={self.chain.height})"

    # -- lifecycle -------------------------------------------------------------

    def start(self) -> List[NodeAction]:
        return self._start_instance()

    def _build_block(self, height: int, proposer: Address, chain: Chain):
        return create_new_proposed_block(
            height, proposer, chain, self.tx_pool, self.vote_schedule, self.config.block_capacity
        )

    def _start_instance(self) -> List[NodeAction]:
        self.instance = None
        if not self.is_validator:
            self.future_messages.pop(self.next_height, None)
            return []

        instance = BlockFinalisationInstance(
            self.next_height, self.chain, self.secret_key, self.config.instance, self._build_block
        )
        self.instance = instance
        logger.debug(f"{short_hex(self.address)} started instance {instance.height}")

        actions = self._drive(instance.start())
        for message in self.future_messages.pop(instance.height, []):
            if self.instance is not instance:
                break
            actions += self._drive(instance.on_message(message))
        return actions

    def _drive(self, actions: List[OutputAction]) -> List[NodeAction]:
        """Pass instance outputs through, applying local decisions to the chain."""
        result: List[NodeAction] = []
        for action in actions:
            result.append(action)
            if isinstance(action, InstanceDecided):
                result += self.on_finalised_block(FinalisedBlockMessage(action.block))
        return result

    # -- inputs ----------------------------------------------------------------

    def on_message(self, message: Message, sender: Address) -> List[NodeAction]:
        if isinstance(message, FinalisedBlockMessage):
            return self.on_finalised_block(message)
        if isinstance(message, GetBlocksMessage):
            return self.on_get_blocks(message.lo, message.hi, sender)
        return self.on_consensus_message(message, sender)

    def on_timer(self, height: int, rnd: int) -> List[NodeAction]:
        if self.instance is None or self.instance.height != height:
            return []
        return self._drive(self.instance.on_round_timer_expiry(rnd))

    def on_finalised_block(self, message: FinalisedBlockMessage) -> List[NodeAction]:
        fb = message.block
        height = fb.height
        if height < self.next_height:
            return []
        if height > self.next_height:
            if height <= self.next_height + self.config.future_buffer_window:
                self.future_blocks.setdefault(height, fb)
            return []

        try:
            self.chain = self.chain.append_finalised_block(fb)
        except ChainAppendError as e:
            self.rejected_blocks += 1
            logger.debug(f"{short_hex(self.address)} rejected block {height}: {e}")
            return []

        self._after_append(fb)
        while self.next_height in self.future_blocks:
            buffered = self.future_blocks.pop(self.next_height)
            try:
                self.chain = self.chain.append_finalised_block(buffered)
            except ChainAppendError as e:
                self.rejected_blocks += 1
                logger.debug(f"{short_hex(self.address)} rejected buffered block {buffered.height}: {e}")
                break
            self._after_append(buffered)

        for stale in [h for h in self.future_blocks if h < self.next_height]:
            del self.future_blocks[stale]
        for stale in [h for h in self.future_messages if h < self.next_height]:
            del self.future_messages[stale]
        return self._start_instance()

    def _after_append(self, fb: FinalisedBlock):
        self.tx_pool.remove_included(fb.block.transactions)
        if fb.block.proposer == self.address:
            self.vote_schedule.consume(fb.block.vote)
        logger.debug(f"{short_hex(self.address)} appended block {fb.height} (round {fb.proof.round})")

    def on_consensus_message(self, message: ConsensusMessage, sender: Address) -> List[NodeAction]:
        height = message.height
        actions: List[NodeAction] = []
        if height > self.next_height and self.expected_height.get(sender, 0) < height:
            self.expected_height[sender] = height
            actions.append(SendTo(sender, GetBlocksMessage(self.next_height, height)))

        if height == self.next_height:
            if self.instance is not None:
                actions += self._drive(self.instance.on_message(message))
        elif self.next_height < height <= self.next_height + self.config.future_buffer_window:
            self.future_messages.setdefault(height, []).append(message)
        return actions

    def on_get_blocks(self, lo: int, hi: int, requester: Address) -> List[NodeAction]:
        if lo > hi:
            return []
        last = min(hi, self.next_height - 1)
        return [SendTo(requester, FinalisedBlockMessage(self.chain[h])) for h in range(max(lo, 1), last + 1)]


__all__ = [
    "ConsensusNode",
    "NodeAction",
    "NodeConfig",
    "SendTo",
]
