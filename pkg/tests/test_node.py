"""
Tests for node-level height management: block ingestion, future buffering,
GET-BLOCKS catch-up and the transaction and vote bookkeeping.
"""

from collections import deque

import pytest

from src.consensus.blocks import FinalisationProof, FinalisedBlock, ProposedBlock, Vote, VoteAction
from src.consensus.chain import VoteInstruction, VoteSchedule, create_new_proposed_block
from src.consensus.crypto import key_gen
from src.consensus.instance import BroadcastToAll, InstanceConfig, InstanceDecided, MulticastToValidators, StartTimer
from src.consensus.messages import (
    FinalisedBlockMessage, GetBlocksMessage, MessageKind, make_prepare, make_proposal,
)
from src.consensus.node import ConsensusNode, NodeConfig, SendTo

from tests.conftest import extend_chain


BASE = 100


def make_node(sk, genesis, **kwargs) -> ConsensusNode:
    window = kwargs.pop("future_buffer_window", 64)
    config = NodeConfig(instance=InstanceConfig(base_timeout=BASE), future_buffer_window=window)
    return ConsensusNode(sk, genesis, config, **kwargs)


def fb_message(chain, height) -> FinalisedBlockMessage:
    return FinalisedBlockMessage(chain[height])


@pytest.fixture
def chain3(chain4, keys4, chain_builder):
    return chain_builder(chain4, keys4, 3)


# =============================================================================
# Start
# =============================================================================

def test_validator_start(genesis4, keys4):
    proposer = make_node(keys4[1], genesis4)
    actions = proposer.start()
    assert actions[0] == StartTimer(1, 0, BASE)
    assert isinstance(actions[1], MulticastToValidators)
    assert proposer.instance.height == 1

    follower = make_node(keys4[0], genesis4)
    assert follower.start() == [StartTimer(1, 0, BASE)]


def test_standard_node_runs_no_instance(genesis4):
    outsider = make_node(key_gen(90)[0], genesis4)
    assert not outsider.is_validator
    assert outsider.start() == []
    assert outsider.instance is None


# =============================================================================
# Finalised blocks
# =============================================================================

def test_next_block_is_appended_and_next_instance_started(genesis4, keys4, chain3):
    node = make_node(keys4[0], genesis4)
    node.start()
    actions = node.on_message(fb_message(chain3, 1), keys4[2].address)
    assert node.chain.height == 1
    assert node.instance.height == 2
    # height 2, round 0 is proposed by keys4[2]
    assert actions == [StartTimer(2, 0, BASE)]


def test_old_and_repeated_blocks_are_ignored(genesis4, keys4, chain3):
    node = make_node(keys4[0], genesis4)
    node.on_message(fb_message(chain3, 1), keys4[1].address)
    assert node.on_message(fb_message(chain3, 1), keys4[1].address) == []
    assert node.chain.height == 1


def test_future_blocks_are_buffered_then_drained(genesis4, keys4, chain3):
    node = make_node(keys4[0], genesis4)
    node.start()
    assert node.on_finalised_block(fb_message(chain3, 3)) == []
    assert node.on_finalised_block(fb_message(chain3, 2)) == []
    assert node.chain.height == 0
    assert set(node.future_blocks) == {2, 3}

    node.on_finalised_block(fb_message(chain3, 1))
    assert node.chain.height == 3
    assert node.chain.block_hashes() == chain3.block_hashes()
    assert node.future_blocks == {}
    assert node.instance.height == 4


def test_future_blocks_beyond_window_are_dropped(genesis4, keys4, chain3):
    node = make_node(keys4[0], genesis4, future_buffer_window=1)
    node.on_finalised_block(fb_message(chain3, 3))
    node.on_finalised_block(fb_message(chain3, 2))
    assert set(node.future_blocks) == {2}


def test_block_without_quorum_of_seals_is_rejected(genesis4, keys4, chain3):
    node = make_node(keys4[0], genesis4)
    fb = chain3[1]
    weak = FinalisedBlock(fb.block, FinalisationProof(fb.proof.round, fb.proof.commit_seals[:2]))
    assert node.on_finalised_block(FinalisedBlockMessage(weak)) == []
    assert node.rejected_blocks == 1
    assert node.chain.height == 0


# =============================================================================
# Consensus messages and catch-up
# =============================================================================

def test_higher_height_traffic_requests_blocks_once_per_peer_and_height(genesis4, keys4):
    node = make_node(keys4[0], genesis4)
    node.start()
    peer = keys4[2]

    first = node.on_message(make_prepare(3, 0, b"\x01" * 32, peer), peer.address)
    assert first == [SendTo(peer.address, GetBlocksMessage(1, 3))]
    assert node.on_message(make_prepare(3, 1, b"\x01" * 32, peer), peer.address) == []
    assert node.on_message(make_prepare(2, 0, b"\x01" * 32, peer), peer.address) == []
    assert node.on_message(make_prepare(4, 0, b"\x01" * 32, peer), peer.address) == [
        SendTo(peer.address, GetBlocksMessage(1, 4))
    ]
    assert node.expected_height[peer.address] == 4

    other = keys4[3]
    assert node.on_message(make_prepare(3, 0, b"\x01" * 32, other), other.address) == [
        SendTo(other.address, GetBlocksMessage(1, 3))
    ]
    assert {h: len(msgs) for h, msgs in node.future_messages.items()} == {2: 1, 3: 3, 4: 1}


def test_current_height_messages_do_not_request_blocks(genesis4, keys4):
    node = make_node(keys4[0], genesis4)
    node.start()
    actions = node.on_message(make_prepare(1, 0, b"\x01" * 32, keys4[2]), keys4[2].address)
    assert not any(isinstance(a, SendTo) for a in actions)


def test_buffered_messages_replay_when_instance_starts(genesis4, keys4, chain3):
    chain1 = chain3.prefix(2)
    proposer = keys4[2]
    block = create_new_proposed_block(2, proposer.address, chain1)
    proposal = make_proposal(2, 0, ProposedBlock(block, 0), None, proposer)

    node = make_node(keys4[0], genesis4)
    node.start()
    node.on_message(proposal, proposer.address)
    actions = node.on_message(fb_message(chain3, 1), proposer.address)

    prepares = [
        a.message for a in actions
        if isinstance(a, MulticastToValidators) and a.message.kind is MessageKind.PREPARE
    ]
    assert len(prepares) == 1
    assert (prepares[0].height, prepares[0].digest) == (2, proposal.digest)
    assert 2 not in node.future_messages


def test_on_get_blocks_clamps_to_local_chain(genesis4, keys4, chain3):
    node = make_node(keys4[0], genesis4)
    for h in (1, 2, 3):
        node.on_finalised_block(fb_message(chain3, h))
    requester = keys4[3].address

    sent = node.on_get_blocks(0, 10, requester)
    assert [s.message.block.height for s in sent] == [1, 2, 3]
    assert all(s.peer == requester for s in sent)
    assert node.on_get_blocks(2, 2, requester) == [SendTo(requester, fb_message(chain3, 2))]
    assert node.on_get_blocks(5, 9, requester) == []
    assert node.on_get_blocks(3, 1, requester) == []


def test_timers_for_other_heights_are_ignored(genesis4, keys4):
    node = make_node(keys4[0], genesis4)
    node.start()
    assert node.on_timer(5, 0) == []
    actions = node.on_timer(1, 0)
    assert actions[0] == StartTimer(1, 1, 2 * BASE)


# =============================================================================
# Transactions and votes
# =============================================================================

def test_included_transactions_leave_the_pool(genesis4, chain4, keys4):
    node = make_node(keys4[0], genesis4, transactions=[b"a", b"b"])
    chain1 = extend_chain(chain4, keys4, transactions=[b"a"])
    node.on_finalised_block(fb_message(chain1, 1))
    assert len(node.tx_pool) == 1
    assert node.tx_pool.select(5) == [b"b"]


def test_proposer_consumes_vote_that_reached_the_chain(genesis4, chain4, keys4):
    newcomer = key_gen(91)[1]
    schedule = VoteSchedule([VoteInstruction(1, VoteAction.ADD, newcomer)])
    node = make_node(keys4[1], genesis4, vote_schedule=schedule)
    chain1 = extend_chain(chain4, keys4, proposer=keys4[1].address, vote=Vote(VoteAction.ADD, newcomer))
    node.on_finalised_block(fb_message(chain1, 1))
    assert len(node.vote_schedule) == 0


def test_vote_in_peer_block_is_not_consumed(genesis4, chain4, keys4):
    newcomer = key_gen(92)[1]
    schedule = VoteSchedule([VoteInstruction(1, VoteAction.ADD, newcomer)])
    node = make_node(keys4[0], genesis4, vote_schedule=schedule)
    chain1 = extend_chain(chain4, keys4, proposer=keys4[1].address, vote=Vote(VoteAction.ADD, newcomer))
    node.on_finalised_block(fb_message(chain1, 1))
    assert len(node.vote_schedule) == 1


# =============================================================================
# Lossless synchronous exchange
# =============================================================================

def test_four_nodes_finalise_identical_chains_without_timeouts(genesis4, keys4):
    nodes = {sk.address: make_node(sk, genesis4, transactions=[b"tx-%d" % i for i in range(5)]) for sk in keys4}
    queue = deque()

    def route(sender, actions):
        for action in actions:
            if isinstance(action, MulticastToValidators):
                queue.extend((sender, r, action.message) for r in action.recipients)
            elif isinstance(action, BroadcastToAll):
                queue.extend((sender, r, action.message) for r in nodes if r != sender)
            elif isinstance(action, SendTo):
                queue.append((sender, action.peer, action.message))
            else:
                assert isinstance(action, (StartTimer, InstanceDecided))

    for address, node in nodes.items():
        route(address, node.start())
    steps = 0
    while queue and min(n.chain.height for n in nodes.values()) < 3:
        sender, receiver, message = queue.popleft()
        route(receiver, nodes[receiver].on_message(message, sender))
        steps += 1
        assert steps < 10_000

    chains = [n.chain for n in nodes.values()]
    assert min(c.height for c in chains) >= 3
    common = min(c.height for c in chains) + 1
    assert len({tuple(c.block_hashes()[:common]) for c in chains}) == 1
    assert all(c[h].proof.round == 0 for c in chains for h in range(1, common))
