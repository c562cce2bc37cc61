"""
Shared fixtures: validator keys, genesis chains and a finalised-chain builder.
"""

from pathlib import Path
from typing import Dict, List, Optional

import pytest

from src.consensus.blocks import (
    EthereumBlock, FinalisationProof, FinalisedBlock, ProposedBlock, Vote,
    compute_block_hash, encode_transactions, make_genesis, quorum,
)
from src.consensus.chain import Chain
from src.consensus.crypto import Address, SecretKey, key_gen, sign
from src.consensus.proposer import ProposerMode, select_proposer
from src.simulation.scenario import scenario_from_dict
from src.utils.config import load_simulation_config


PROJECT_ROOT = Path(__file__).resolve().parents[1]
SCENARIO_DIR = PROJECT_ROOT / "config" / "scenarios"


def make_keys(n: int, first_seed: int = 1) -> List[SecretKey]:
    """n keys sorted by address, so keys[i] is the i-th validator-set member."""
    keys = [key_gen(first_seed + i)[0] for i in range(n)]
    return sorted(keys, key=lambda sk: sk.address)


def seal_block(block: EthereumBlock, rnd: int, signers: List[SecretKey]) -> FinalisedBlock:
    digest = compute_block_hash(ProposedBlock(block, rnd))
    return FinalisedBlock(block, FinalisationProof(rnd, tuple(sign(digest, sk) for sk in signers)))


def extend_chain(
    chain: Chain,
    keys: List[SecretKey],
    proposer: Optional[Address] = None,
    vote: Optional[Vote] = None,
    rnd: int = 0,
    transactions=(),
) -> Chain:
    """Append one block signed by the first quorum(n) validators of the next height."""
    height = chain.next_height
    validator_set = chain.validators_at(height)
    by_address: Dict[Address, SecretKey] = {sk.address: sk for sk in keys}
    signers = [by_address[a] for a in validator_set.members if a in by_address][: quorum(len(validator_set))]
    if proposer is None:
        proposer = select_proposer(chain, rnd, ProposerMode())
    block = EthereumBlock(
        parent_hash=chain.tip.block.hash,
        height=height,
        proposer=proposer,
        payload=encode_transactions(list(transactions)),
        vote=vote,
    )
    return chain.append_finalised_block(seal_block(block, rnd, signers))


@pytest.fixture
def keys4() -> List[SecretKey]:
    return make_keys(4)


@pytest.fixture
def keys7() -> List[SecretKey]:
    return make_keys(7)


@pytest.fixture
def genesis4(keys4) -> FinalisedBlock:
    return make_genesis([sk.address for sk in keys4])


@pytest.fixture
def chain4(genesis4) -> Chain:
    return Chain.from_genesis(genesis4)


@pytest.fixture
def chain_builder():
    """extend_chain as a fixture: chain_builder(chain, keys, heights, mode)."""
    def build(chain: Chain, keys: List[SecretKey], heights: int, mode: ProposerMode = ProposerMode()) -> Chain:
        for _ in range(heights):
            chain = extend_chain(chain, keys, proposer=select_proposer(chain, 0, mode))
        return chain
    return build


@pytest.fixture
def scenario_factory():
    """Scenario from a partial document merged over the bundled defaults."""
    defaults = load_simulation_config().get("scenario_defaults", {})

    def build(**raw):
        return scenario_from_dict(raw, defaults, source="test")
    return build
