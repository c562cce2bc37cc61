"""
Scenario files.

A scenario is a JSON (or YAML) document describing the validator roster,
network behaviour, Byzantine nodes, scripted votes and the stop condition.
Nodes are referred to by index: 0..n-1 are the genesis validators, n.. are
standard nodes (which may later be voted in). Missing keys fall back to
`scenario_defaults` in config/simulation.yml.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from ..consensus.blocks import VoteAction, make_genesis, max_byzantine
from ..consensus.chain import VoteInstruction, VoteSchedule
from ..consensus.crypto import Address, DigestRegistry, SecretKey, key_gen
from ..consensus.errors import ConfigurationError, ScenarioError
from ..consensus.instance import InstanceConfig
from ..consensus.node import ConsensusNode, NodeConfig
from ..consensus.proposer import ProposerMode
from ..utils.config import deep_merge, load_simulation_config
from .adversary import Adversary, ByzantineStrategy, ScriptEntry
from .network import DropRule, NetworkConfig, SimWorld, StopCondition


logger = logging.getLogger(__name__)

# Offset added to node indices to derive key seeds.
KEY_SEED_OFFSET = 1


@dataclass(frozen=True)
class VoteSpec:
    height_hint: int
    proposer: int
    action: VoteAction
    target: int


@dataclass(frozen=True)
class Scenario:
    """Parsed, validated scenario."""

    name: str
    n: int
    seed: int
    network: NetworkConfig
    stop: StopCondition
    base_timeout: int = 1000
    proposer_mode: ProposerMode = field(default_factory=ProposerMode)
    fast_forward: bool = False
    standard_nodes: int = 0
    byzantine: Dict[int, Tuple[ByzantineStrategy, ...]] = field(default_factory=dict, hash=False)
    scripts: Dict[int, Tuple[ScriptEntry, ...]] = field(default_factory=dict, hash=False)
    votes: Tuple[VoteSpec, ...] = ()
    allow_overload: bool = False
    future_buffer_window: int = 64
    block_capacity: int = 16
    transactions_per_node: int = 32
    source: Optional[str] = None

    @property
    def node_count(self) -> int:
        return self.n + self.standard_nodes

    def keys(self) -> List[Tuple[SecretKey, Address]]:
        return [key_gen(KEY_SEED_OFFSET + i) for i in range(self.node_count)]

    def address(self, index: int) -> Address:
        return key_gen(KEY_SEED_OFFSET + index)[1]

    def label(self, index: int) -> str:
        return f"node{index}"

    def to_dict(self) -> Dict[str, Any]:
        """Parameters echoed into summaries and audit logs."""
        return {
            "name": self.name,
            "n": self.n,
            "standard_nodes": self.standard_nodes,
            "seed": self.seed,
            "gst": self.network.gst,
            "delta": self.network.delta,
            "base_timeout": self.base_timeout,
            "proposer_mode": str(self.proposer_mode),
            "fast_forward": self.fast_forward,
            "byzantine": {str(i): [s.value for s in strategies] for i, strategies in sorted(self.byzantine.items())},
            "allow_overload": self.allow_overload,
        }

    def validate(self):
        """
        Raises:
            ScenarioError: inconsistent roster, strategies or votes
        """
        if self.n < 1:
            raise ScenarioError(f"Scenario needs at least one validator, got n={self.n}")
        if self.base_timeout < 1:
            raise ScenarioError(f"base_timeout must be positive, got {self.base_timeout}")
        for index in list(self.byzantine) + list(self.scripts):
            if not 0 <= index < self.node_count:
                raise ScenarioError(f"Node index {index} outside 0..{self.node_count - 1}")
        byzantine_validators = sum(1 for i in self.byzantine if i < self.n)
        if byzantine_validators > max_byzantine(self.n) and not self.allow_overload:
            raise ScenarioError(
                f"{byzantine_validators} Byzantine validators exceed f({self.n}) = {max_byzantine(self.n)}; "
                f"set allow_overload to run it anyway"
            )
        for vote in self.votes:
            if not 0 <= vote.proposer < self.node_count or not 0 <= vote.target < self.node_count:
                raise ScenarioError(f"Vote refers to an unknown node: {vote}")
        if self.stop.target_height is None and self.stop.max_time is None:
            raise ScenarioError("Stop condition needs target_height or max_time")

    def build_world(self, digest_registry: Optional[DigestRegistry] = None, record_steps: bool = True) -> SimWorld:
        """Instantiate nodes, adversaries and the network for this scenario."""
        keys = self.keys()
        addresses = [address for _, address in keys]
        genesis = make_genesis(addresses[: self.n])

        node_config = NodeConfig(
            instance=InstanceConfig(
                base_timeout=self.base_timeout,
                proposer_mode=self.proposer_mode,
                fast_forward=self.fast_forward,
            ),
            future_buffer_window=self.future_buffer_window,
            block_capacity=self.block_capacity,
        )

        nodes = {}
        for index, (sk, address) in enumerate(keys):
            instructions = [
                VoteInstruction(v.height_hint, v.action, addresses[v.target])
                for v in self.votes if v.proposer == index
            ]
            transactions = [b"tx|%d|%d" % (index, k) for k in range(self.transactions_per_node)]
            nodes[address] = ConsensusNode(sk, genesis, node_config, transactions, VoteSchedule(instructions))

        adversaries = {
            addresses[index]: Adversary(keys[index][0], strategies, self.scripts.get(index, ()))
            for index, strategies in sorted(self.byzantine.items())
        }
        labels = {address: self.label(index) for index, address in enumerate(addresses)}
        return SimWorld(nodes, self.network, self.seed, adversaries, labels, digest_registry, record_steps)


# =============================================================================
# Parsing
# =============================================================================

def _as_int(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"{name} must be an integer, got {value!r}")
    return value


def _parse_node_refs(value: Any, count: int) -> List[int]:
    if value == "*":
        return list(range(count))
    if isinstance(value, list):
        return [_as_int(v, "node index") for v in value]
    return [_as_int(value, "node index")]


def _parse_strategies(value: Any) -> Tuple[ByzantineStrategy, ...]:
    values = value if isinstance(value, list) else [value]
    return tuple(ByzantineStrategy.parse(str(v)) for v in values)


def _parse_pre_gst(raw: Dict[str, Any]) -> Dict[str, Any]:
    max_delay = raw.get("max_delay", 2000)
    if max_delay in ("infinite", None):
        max_delay = None
    else:
        max_delay = _as_int(max_delay, "pre_gst.max_delay")
    return {
        "pre_gst_min_delay": _as_int(raw.get("min_delay", 1), "pre_gst.min_delay"),
        "pre_gst_max_delay": max_delay,
        "pre_gst_loss": float(raw.get("loss", 0.0)),
    }


def scenario_from_dict(
    raw: Dict[str, Any],
    defaults: Optional[Dict[str, Any]] = None,
    source: Optional[str] = None,
) -> Scenario:
    """
    Build a Scenario from a parsed document.

    Raises:
        ScenarioError: on any missing, mistyped or inconsistent value
    """
    if not isinstance(raw, dict):
        raise ScenarioError("Scenario document must be a mapping")
    merged = deep_merge(defaults or {}, raw)

    try:
        n = _as_int(merged["n"], "n")
        standard_nodes = _as_int(merged.get("standard_nodes", 0), "standard_nodes")
        count = n + standard_nodes

        labels_to_index = {f"node{i}": i for i in range(count)}

        def index_of(ref: Any) -> int:
            if isinstance(ref, str) and ref in labels_to_index:
                return labels_to_index[ref]
            if isinstance(ref, str) and ref.isdigit():
                return int(ref)
            return _as_int(ref, "node index")

        drop_rules = []
        addresses = [key_gen(KEY_SEED_OFFSET + i)[1] for i in range(count)]
        for rule in merged.get("drop_matrix", []) or []:
            for s in _parse_node_refs(rule.get("from", "*"), count):
                for r in _parse_node_refs(rule.get("to", "*"), count):
                    if s != r and 0 <= s < count and 0 <= r < count:
                        drop_rules.append(DropRule(
                            addresses[s], addresses[r],
                            _as_int(rule.get("start", 0), "drop_matrix.start"),
                            _as_int(rule["end"], "drop_matrix.end"),
                        ))

        network = NetworkConfig(
            gst=_as_int(merged.get("gst", 0), "gst"),
            delta=_as_int(merged.get("delta", 100), "delta"),
            drop_matrix=tuple(drop_rules),
            **_parse_pre_gst(merged.get("pre_gst", {}) or {}),
        )

        stop_raw = merged.get("stop", {}) or {}
        max_time = stop_raw.get("max_time")
        target_height = stop_raw.get("target_height")
        stop = StopCondition(
            max_time=None if max_time is None else _as_int(max_time, "stop.max_time"),
            target_height=None if target_height is None else _as_int(target_height, "stop.target_height"),
            max_events=_as_int(stop_raw.get("max_events", 1_000_000), "stop.max_events"),
        )

        byzantine = {index_of(k): _parse_strategies(v) for k, v in (merged.get("byzantine") or {}).items()}

        scripts = {}
        for k, entries in (merged.get("scripts") or {}).items():
            parsed = []
            for entry in entries:
                kind = entry["kind"]
                if kind not in ("prepare", "commit", "round_change"):
                    raise ScenarioError(f"Unknown scripted message kind: {kind!r}")
                recipients = entry.get("recipients")
                parsed.append(ScriptEntry(
                    time=_as_int(entry["time"], "script.time"),
                    kind=kind,
                    height=_as_int(entry["height"], "script.height"),
                    round=_as_int(entry["round"], "script.round"),
                    digest=bytes.fromhex(entry["digest"]) if entry.get("digest") else None,
                    recipients=tuple(addresses[index_of(r)] for r in recipients) if recipients else None,
                ))
            scripts[index_of(k)] = tuple(parsed)

        votes = tuple(
            VoteSpec(
                height_hint=_as_int(v.get("height_hint", 1), "votes.height_hint"),
                proposer=index_of(v["proposer"]),
                action=VoteAction(str(v["action"]).lower()),
                target=index_of(v["target"]),
            )
            for v in merged.get("votes", []) or []
        )

        scenario = Scenario(
            name=str(merged.get("name", Path(source).stem if source else "scenario")),
            n=n,
            seed=_as_int(merged.get("seed", 0), "seed"),
            network=network,
            stop=stop,
            base_timeout=_as_int(merged.get("base_timeout", 1000), "base_timeout"),
            proposer_mode=ProposerMode.parse(str(merged.get("proposer_mode", "round_robin"))),
            fast_forward=bool(merged.get("fast_forward_enabled", False)),
            standard_nodes=standard_nodes,
            byzantine=byzantine,
            scripts=scripts,
            votes=votes,
            allow_overload=bool(merged.get("allow_overload", False)),
            future_buffer_window=_as_int(merged.get("future_buffer_window", 64), "future_buffer_window"),
            block_capacity=_as_int(merged.get("block_capacity", 16), "block_capacity"),
            transactions_per_node=_as_int(merged.get("transactions_per_node", 32), "transactions_per_node"),
            source=source,
        )
    except ScenarioError:
        raise
    except (ConfigurationError, AttributeError, KeyError, TypeError, ValueError, IndexError) as e:
        raise ScenarioError(f"Invalid scenario{f' {source}' if source else ''}: {e}") from e

    scenario.validate()
    return scenario


def load_scenario(
    path: Union[str, Path],
    overrides: Optional[Dict[str, Any]] = None,
    config_path: Optional[Union[str, Path]] = None,
) -> Scenario:
    """
    Read a scenario file and apply command-line overrides.

    Args:
        path: JSON, or YAML when the suffix is .yml/.yaml
        overrides: Top-level keys replacing the file's values (seed, allow_overload, ...)
        config_path: Simulator defaults file

    Raises:
        ScenarioError: unreadable or invalid scenario
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            if path.suffix in (".yml", ".yaml"):
                raw = yaml.safe_load(f)
            else:
                raw = json.load(f)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError, yaml.YAMLError) as e:
        raise ScenarioError(f"Cannot read scenario {path}: {e}") from e

    if isinstance(raw, dict) and overrides:
        raw = deep_merge(raw, {k: v for k, v in overrides.items() if v is not None})

    defaults = load_simulation_config(config_path).get("scenario_defaults", {})
    scenario = scenario_from_dict(raw, defaults, source=str(path))
    logger.info(f"Loaded scenario {scenario.name} (n={scenario.n}, seed={scenario.seed}) from {path}")
    return scenario


def with_seed(scenario: Scenario, seed: int) -> Scenario:
    return replace(scenario, seed=seed)


__all__ = [
    "KEY_SEED_OFFSET",
    "Scenario",
    "VoteSpec",
    "load_scenario",
    "scenario_from_dict",
    "with_seed",
]
