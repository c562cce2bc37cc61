"""
Discrete-event simulation of an eventually synchronous network.

Time is an integer tick count. Events sit in a heap ordered by
(time, insertion sequence), so a (configuration, seed) pair fully determines
the run. Before GST a message may be lost or delayed arbitrarily within the
configured bounds; from GST on every message arrives within delta ticks.
Messages sent before GST that survive are delivered no later than gst + delta.
"""

import heapq
import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from ..consensus.blocks import FinalisedBlock
from ..consensus.crypto import Address, DigestRegistry, short_hex
from ..consensus.errors import ConfigurationError
from ..consensus.instance import BroadcastToAll, InstanceDecided, MulticastToValidators, StartTimer
from ..consensus.messages import Message, summarise
from ..consensus.node import ConsensusNode, SendTo
from .adversary import Adversary


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DropRule:
    """Drop every message on link sender -> receiver sent during [start, end)."""

    sender: Address
    receiver: Address
    start: int
    end: int

    def matches(self, sender: Address, receiver: Address, now: int) -> bool:
        return self.sender == sender and self.receiver == receiver and self.start <= now < self.end


@dataclass(frozen=True)
class NetworkConfig:
    """
    Args:
        gst: Global stabilisation time (tick)
        delta: Post-GST maximum delay
        pre_gst_min_delay: Smallest pre-GST delay
        pre_gst_max_delay: Largest pre-GST delay, None for unbounded (message dropped)
        pre_gst_loss: Probability that a pre-GST message is lost
        drop_matrix: Link-level drop windows
    """

    gst: int = 0
    delta: int = 100
    pre_gst_min_delay: int = 1
    pre_gst_max_delay: Optional[int] = None
    pre_gst_loss: float = 0.0
    drop_matrix: Tuple[DropRule, ...] = ()

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.gst < 0:
            raise ConfigurationError(f"gst must be non-negative, got {self.gst}")
        if self.delta < 1:
            raise ConfigurationError(f"delta must be at least 1 tick, got {self.delta}")
        if not 0.0 <= self.pre_gst_loss <= 1.0:
            raise ConfigurationError(f"pre_gst_loss must lie in [0, 1], got {self.pre_gst_loss}")
        if self.pre_gst_min_delay < 1:
            raise ConfigurationError(f"pre_gst_min_delay must be at least 1, got {self.pre_gst_min_delay}")
        if self.pre_gst_max_delay is not None and self.pre_gst_max_delay < self.pre_gst_min_delay:
            raise ConfigurationError("pre_gst_max_delay must not be below pre_gst_min_delay")
        for rule in self.drop_matrix:
            if rule.end < rule.start:
                raise ConfigurationError(f"Drop window ends before it starts: {rule}")

    def delivery_prob_within_base3(self, base_timeout: int) -> float:
        """Probability that a post-GST message arrives within base_timeout / 3."""
        window = base_timeout // 3
        if self.delta <= window:
            return 1.0
        return max(0, window) / self.delta


@dataclass(frozen=True)
class StopCondition:
    max_time: Optional[int] = None
    target_height: Optional[int] = None
    max_events: int = 1_000_000

    def met_by(self, reason: str) -> bool:
        if self.target_height is not None:
            return reason == "target_height"
        return reason in ("max_time", "quiescent")


@dataclass(frozen=True)
class Delivery:
    target: Address
    sender: Address
    message: Message


@dataclass(frozen=True)
class TimerExpiry:
    target: Address
    height: int
    round: int


@dataclass(frozen=True)
class ScriptedStep:
    target: Address
    index: int


Event = Union[Delivery, TimerExpiry, ScriptedStep]


class EventQueue:
    """Heap of (time, seq, event); seq breaks ties in insertion order."""

    def __init__(self):
        self._heap: List[Tuple[int, int, Event]] = []
        self._seq = itertools.count()

    def push(self, when: int, event: Event):
        heapq.heappush(self._heap, (when, next(self._seq), event))

    def pop(self) -> Tuple[int, Event]:
        when, _, event = heapq.heappop(self._heap)
        return when, event

    def peek_time(self) -> Optional[int]:
        return self._heap[0][0] if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)


@dataclass
class RunResult:
    stop_reason: str
    events: int
    time: int
    trace: List[Dict[str, Any]] = field(default_factory=list)


class SimWorld:
    """
    Simulated network of consensus nodes.

    Args:
        nodes: Nodes by address
        network: Delay, loss and partition settings
        seed: Seed for the numpy Generator driving delays and loss
        adversaries: Byzantine behaviour by address (absent means honest)
        labels: Display names used in trace records
        digest_registry: Optional collision check over every carried message
    """

    def __init__(
        self,
        nodes: Dict[Address, ConsensusNode],
        network: NetworkConfig,
        seed: int = 0,
        adversaries: Optional[Dict[Address, Adversary]] = None,
        labels: Optional[Dict[Address, str]] = None,
        digest_registry: Optional[DigestRegistry] = None,
        record_steps: bool = True,
    ):
        self.nodes = nodes
        self.network = network
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.adversaries = adversaries or {}
        self.labels = labels or {a: short_hex(a) for a in nodes}
        self.digest_registry = digest_registry
        self.record_steps = record_steps

        self.now = 0
        self.events = 0
        self.queue = EventQueue()
        self.trace: List[Dict[str, Any]] = []
        self.started = False

    @property
    def honest(self) -> List[Address]:
        return [a for a in self.nodes if a not in self.adversaries]

    def honest_chains(self):
        return [self.nodes[a].chain for a in self.honest]

    def label(self, address: Address) -> str:
        return self.labels.get(address, short_hex(address))

    # -- network -----------------------------------------------------------------

    def schedule_send(self, sender: Address, receiver: Address, message: Message):
        """Schedule one point-to-point delivery, or record why it was dropped."""
        if sender == receiver or receiver not in self.nodes:
            return
        if self.digest_registry is not None:
            self.digest_registry.record(message.encoded)

        net = self.network
        reason = None
        if any(rule.matches(sender, receiver, self.now) for rule in net.drop_matrix):
            reason = "partition"
        elif self.now >= net.gst:
            when = self.now + int(self.rng.integers(1, net.delta + 1))
        elif net.pre_gst_loss > 0 and self.rng.random() < net.pre_gst_loss:
            reason = "pre_gst_loss"
        elif net.pre_gst_max_delay is None:
            reason = "pre_gst_unbounded"
        else:
            delay = int(self.rng.integers(net.pre_gst_min_delay, net.pre_gst_max_delay + 1))
            when = min(self.now + delay, net.gst + net.delta)

        if reason is not None:
            self._record({
                "type": "dropped",
                "time": self.now,
                "from": self.label(sender),
                "to": self.label(receiver),
                "reason": reason,
                "kind": summarise(message)["kind"],
            })
            return
        self.queue.push(when, Delivery(receiver, sender, message))

    def schedule_timer(self, address: Address, timer: StartTimer):
        self.queue.push(self.now + timer.duration, TimerExpiry(address, timer.height, timer.round))

    # -- stepping -------------------------------------------------------------------

    def start(self):
        """Start every node's first instance at time 0 and queue scripted behaviour."""
        if self.started:
            return
        self.started = True
        for address, adversary in self.adversaries.items():
            for index, when in enumerate(adversary.script_times()):
                self.queue.push(when, ScriptedStep(address, index))
        for address, node in self.nodes.items():
            actions = node.start()
            adversary = self.adversaries.get(address)
            if adversary is not None:
                actions = adversary.rewrite(actions, node)
            if self.record_steps:
                self.trace.append({
                    "type": "step",
                    "time": self.now,
                    "node": self.label(address),
                    "height": node.next_height,
                    "round": node.instance.current_round if node.instance else None,
                    "event": "start",
                    "message": None,
                    "actions": [action.to_record() for action in actions],
                })
            self._route(address, node, actions, before_height=node.next_height)

    def step(self) -> bool:
        """Process the earliest event; False when the queue is empty."""
        if not self.queue:
            return False
        when, event = self.queue.pop()
        self.now = when
        self.events += 1

        address = event.target
        node = self.nodes[address]
        adversary = self.adversaries.get(address)
        before_height = node.next_height

        record: Dict[str, Any] = {
            "type": "step",
            "time": self.now,
            "node": self.label(address),
            "height": node.next_height,
            "round": node.instance.current_round if node.instance else None,
        }

        if isinstance(event, Delivery):
            record["event"] = "deliver"
            record["message"] = summarise(event.message)
            record["from"] = self.label(event.sender)
            if adversary is not None:
                adversary.observe(event.message)
            actions = node.on_message(event.message, event.sender)
        elif isinstance(event, TimerExpiry):
            instance = node.instance
            stale = instance is None or instance.height != event.height or instance.current_round != event.round
            record["event"] = "timer_ignored" if stale else "timer"
            record["message"] = {"height": event.height, "round": event.round}
            actions = node.on_timer(event.height, event.round)
        else:
            record["event"] = "scripted"
            record["message"] = {"index": event.index}
            actions = adversary.scripted_actions(event.index, node)

        trigger = event.message if isinstance(event, Delivery) else None
        if adversary is not None and not isinstance(event, ScriptedStep):
            actions = adversary.rewrite(actions, node, trigger)

        record["actions"] = [action.to_record() for action in actions]
        if self.record_steps:
            self.trace.append(record)
        self._route(address, node, actions, before_height)
        return True

    def _route(self, address: Address, node: ConsensusNode, actions, before_height: int):
        honest = address not in self.adversaries
        for action in actions:
            if isinstance(action, MulticastToValidators):
                for receiver in action.recipients:
                    self.schedule_send(address, receiver, action.message)
            elif isinstance(action, BroadcastToAll):
                for receiver in self.nodes:
                    self.schedule_send(address, receiver, action.message)
            elif isinstance(action, SendTo):
                self.schedule_send(address, action.peer, action.message)
            elif isinstance(action, StartTimer):
                self.schedule_timer(address, action)
                if action.round == 0:
                    self._record({
                        "type": "instance_started",
                        "time": self.now,
                        "node": self.label(address),
                        "height": action.height,
                    })
            elif isinstance(action, InstanceDecided):
                self._record(self._block_record("decided", address, action.block, honest))

        for height in range(before_height, node.next_height):
            self._record(self._block_record("block_appended", address, node.chain[height], honest))

    def _block_record(self, kind: str, address: Address, fb: FinalisedBlock, honest: bool) -> Dict[str, Any]:
        return {
            "type": kind,
            "time": self.now,
            "node": self.label(address),
            "height": fb.height,
            "round": fb.proof.round,
            "digest": fb.block.hash.hex(),
            "proposer": self.label(fb.block.proposer),
            "seals": len(fb.proof.commit_seals),
            "honest": honest,
        }

    def _record(self, record: Dict[str, Any]):
        self.trace.append(record)

    # -- running ----------------------------------------------------------------------

    def target_reached(self, target_height: int) -> bool:
        return all(self.nodes[a].chain.height >= target_height for a in self.honest)

    def run(self, stop: StopCondition) -> RunResult:
        """Step until the stop condition holds or the queue drains."""
        self.start()
        reason = "quiescent"
        while True:
            if stop.target_height is not None and self.target_reached(stop.target_height):
                reason = "target_height"
                break
            if self.events >= stop.max_events:
                reason = "max_events"
                break
            next_time = self.queue.peek_time()
            if next_time is None:
                reason = "quiescent"
                break
            if stop.max_time is not None and next_time > stop.max_time:
                reason = "max_time"
                break
            self.step()

        logger.info(
            f"Simulation stopped ({reason}) at t={self.now} after {self.events} events; "
            f"honest heights {[self.nodes[a].chain.height for a in self.honest]}"
        )
        return RunResult(stop_reason=reason, events=self.events, time=self.now, trace=self.trace)


__all__ = [
    "Delivery",
    "DropRule",
    "EventQueue",
    "NetworkConfig",
    "RunResult",
    "ScriptedStep",
    "SimWorld",
    "StopCondition",
    "TimerExpiry",
]
