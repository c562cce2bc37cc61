"""
Tests for the block finalisation instance: hand traces of every upon-rule,
prepared-certificate validation and the certificate oracles.
"""

from itertools import combinations, product

import numpy as np
import pytest

from src.consensus.blocks import EthereumBlock, ProposedBlock, encode_transactions
from src.consensus.crypto import key_gen, sign
from src.consensus.errors import ConfigurationError
from src.consensus.instance import (
    BlockFinalisationInstance, BroadcastToAll, InstanceConfig, InstanceDecided,
    MulticastToValidators, StartTimer, prepared_digest, round_timer_timeout, start_instance, valid_pc,
)
from src.consensus.messages import (
    MessageKind, PreparedCertificate, ProposalMessage, RoundChangeCertificate, RoundChangeMessage,
    make_commit, make_prepare, make_proposal, make_round_change,
)
from src.consensus.proposer import select_proposer, validators


BASE = 100


def make_instance(sk, chain, fast_forward=False) -> BlockFinalisationInstance:
    return BlockFinalisationInstance(1, chain, sk, InstanceConfig(base_timeout=BASE, fast_forward=fast_forward))


def block_by(chain, proposer_sk, tag: bytes = b"") -> EthereumBlock:
    return EthereumBlock(chain.tip.block.hash, 1, proposer_sk.address, encode_transactions([tag] if tag else []))


def multicasts(actions):
    return [a.message for a in actions if isinstance(a, MulticastToValidators)]


def make_pc(pb: ProposedBlock, proposer_sk, preparer_sks, height: int = 1) -> PreparedCertificate:
    proposal = make_proposal(height, pb.round, pb, None, proposer_sk)
    prepares = [make_prepare(height, pb.round, pb.digest, sk) for sk in preparer_sks]
    return PreparedCertificate.of([proposal.signed] + prepares)


def rcc_of(messages) -> RoundChangeCertificate:
    return RoundChangeCertificate(tuple(m.signed for m in messages))


# -- proposer layout for keys4 under round robin from genesis ------------------
# proposer(r) = members[(1 + r) % 4]: r0 -> keys4[1], r1 -> keys4[2], r2 -> keys4[3], r3 -> keys4[0]


def test_round_robin_layout(chain4, keys4):
    assert [select_proposer(chain4, r) for r in range(4)] == [keys4[1].address, keys4[2].address,
                                                               keys4[3].address, keys4[0].address]


# =============================================================================
# Timers
# =============================================================================

@pytest.mark.parametrize("r,base,expected", [(0, 10, 10), (3, 10, 80), (5, 1000, 32000)])
def test_round_timer_timeout(r, base, expected):
    assert round_timer_timeout(r, base) == expected


def test_round_timer_timeout_is_increasing():
    durations = [round_timer_timeout(r, 7) for r in range(40)]
    assert durations == sorted(set(durations))


@pytest.mark.parametrize("r,base", [(63, 2), (-1, 10), (0, 0)])
def test_round_timer_timeout_errors(r, base):
    with pytest.raises(ConfigurationError):
        round_timer_timeout(r, base)


# =============================================================================
# Start
# =============================================================================

def test_round_zero_proposer_start(chain4, keys4):
    instance, actions = start_instance(1, chain4, keys4[1], InstanceConfig(base_timeout=BASE))
    assert actions[0] == StartTimer(1, 0, BASE)
    assert isinstance(actions[1], MulticastToValidators)
    proposal = actions[1].message
    assert isinstance(proposal, ProposalMessage)
    assert (proposal.height, proposal.round) == (1, 0)
    assert proposal.round_change_certificate is None
    assert len(actions[1].recipients) == 3
    assert keys4[1].address not in actions[1].recipients
    assert instance.accepted_pb == proposal.proposed_block
    assert len(actions) == 2


def test_non_proposer_start(chain4, keys4):
    instance, actions = start_instance(1, chain4, keys4[0], InstanceConfig(base_timeout=BASE))
    assert actions == [StartTimer(1, 0, BASE)]
    assert instance.accepted_pb is None
    assert instance.start() == []


def test_instance_needs_matching_prefix(chain4, keys4):
    with pytest.raises(ValueError):
        BlockFinalisationInstance(2, chain4, keys4[0])


def test_validators_agree_on_proposer(chain4, keys4):
    a = make_instance(keys4[0], chain4)
    b = make_instance(keys4[3], chain4)
    assert all(a.proposer(r) == b.proposer(r) for r in range(8))


# =============================================================================
# Round 0
# =============================================================================

@pytest.fixture
def round0_proposal(chain4, keys4):
    return make_proposal(1, 0, ProposedBlock(block_by(chain4, keys4[1]), 0), None, keys4[1])


def test_accept_round_zero_proposal(chain4, keys4, round0_proposal):
    instance = make_instance(keys4[0], chain4)
    instance.start()
    actions = instance.on_message(round0_proposal)
    [prepare] = multicasts(actions)
    assert prepare.kind is MessageKind.PREPARE
    assert (prepare.height, prepare.round, prepare.digest) == (1, 0, round0_proposal.digest)
    assert prepare.sender == keys4[0].address
    assert instance.accepted_pb == round0_proposal.proposed_block


def test_round_zero_proposal_from_wrong_sender(chain4, keys4):
    instance = make_instance(keys4[0], chain4)
    instance.start()
    wrong = make_proposal(1, 0, ProposedBlock(block_by(chain4, keys4[2]), 0), None, keys4[2])
    assert instance.on_message(wrong) == []
    assert instance.accepted_pb is None
    assert wrong.encoded in instance.received


def test_round_zero_proposal_with_invalid_block(chain4, keys4):
    instance = make_instance(keys4[0], chain4)
    instance.start()
    orphan = EthereumBlock(b"\x05" * 32, 1, keys4[1].address)
    assert instance.on_message(make_proposal(1, 0, ProposedBlock(orphan, 0), None, keys4[1])) == []


def test_second_proposal_after_acceptance_is_ignored(chain4, keys4, round0_proposal):
    instance = make_instance(keys4[0], chain4)
    instance.start()
    instance.on_message(round0_proposal)
    other = make_proposal(1, 0, ProposedBlock(block_by(chain4, keys4[1], b"other"), 0), None, keys4[1])
    assert instance.on_message(other) == []
    assert instance.accepted_pb == round0_proposal.proposed_block


def test_messages_for_other_heights_are_ignored(chain4, keys4, round0_proposal):
    instance = make_instance(keys4[0], chain4)
    instance.start()
    other_height = make_prepare(2, 0, round0_proposal.digest, keys4[2])
    assert instance.on_message(other_height) == []
    assert other_height.encoded not in instance.received


# =============================================================================
# Prepare and commit
# =============================================================================

@pytest.fixture
def accepted(chain4, keys4, round0_proposal):
    instance = make_instance(keys4[0], chain4)
    instance.start()
    instance.on_message(round0_proposal)
    return instance


def test_prepare_quorum_sends_commit(accepted, keys4, round0_proposal):
    digest = round0_proposal.digest
    actions = accepted.on_message(make_prepare(1, 0, digest, keys4[2]))
    [commit] = multicasts(actions)
    assert commit.kind is MessageKind.COMMIT
    assert commit.commit_seal == sign(digest, keys4[0])
    assert accepted.commit_sent
    assert len(accepted.latest_pc) == 3
    assert accepted.latest_prepared_block == round0_proposal.proposed_block
    assert prepared_digest(accepted.latest_pc) == (digest, 0)


def test_proposer_prepare_duplicate_and_stale_prepares_do_not_count(accepted, keys4, round0_proposal):
    digest = round0_proposal.digest
    assert accepted.on_message(make_prepare(1, 0, digest, keys4[1])) == []
    stale = make_prepare(1, 1, digest, keys4[3])
    assert accepted.on_message(stale) == []
    assert accepted.on_message(stale) == []
    assert not accepted.commit_sent
    assert len(accepted.valid_prepare_messages()) == 1

    assert multicasts(accepted.on_message(make_prepare(1, 0, digest, keys4[3])))


def test_commit_quorum_decides_once(accepted, keys4, round0_proposal):
    digest = round0_proposal.digest
    accepted.on_message(make_prepare(1, 0, digest, keys4[2]))
    assert accepted.on_message(make_commit(1, 0, digest, sign(digest, keys4[2]), keys4[2])) == []

    actions = accepted.on_message(make_commit(1, 0, digest, sign(digest, keys4[3]), keys4[3]))
    broadcast = [a for a in actions if isinstance(a, BroadcastToAll)]
    decided = [a for a in actions if isinstance(a, InstanceDecided)]
    assert len(broadcast) == 1 and len(decided) == 1
    fb = decided[0].block
    assert fb.block == round0_proposal.proposed_block.block
    assert fb.proof.round == 0
    assert len(fb.proof.commit_seals) == 3
    assert accepted.decided == fb

    late = make_commit(1, 0, digest, sign(digest, keys4[1]), keys4[1])
    assert accepted.on_message(late) == []


def test_commit_with_foreign_seal_is_not_counted(accepted, keys4, round0_proposal):
    digest = round0_proposal.digest
    accepted.on_message(make_prepare(1, 0, digest, keys4[2]))
    accepted.on_message(make_commit(1, 0, digest, sign(digest, keys4[3]), keys4[2]))
    actions = accepted.on_message(make_commit(1, 0, digest, sign(digest, keys4[1]), keys4[1]))
    assert not any(isinstance(a, InstanceDecided) for a in actions)
    assert len(accepted.valid_commit_messages()) == 2


# =============================================================================
# Timer expiry
# =============================================================================

def test_fresh_timer_expiry_sends_empty_round_change(chain4, keys4):
    instance = make_instance(keys4[0], chain4)
    instance.start()
    actions = instance.on_round_timer_expiry(0)
    assert actions[0] == StartTimer(1, 1, 2 * BASE)
    [rc] = multicasts(actions)
    assert isinstance(rc, RoundChangeMessage)
    assert (rc.height, rc.round) == (1, 1)
    assert rc.prepared_certificate is None and rc.latest_prepared_block is None
    assert instance.current_round == 1
    assert instance.on_round_timer_expiry(0) == []


def test_prepared_timer_expiry_carries_certificate(accepted, keys4, round0_proposal):
    accepted.on_message(make_prepare(1, 0, round0_proposal.digest, keys4[2]))
    [rc] = multicasts(accepted.on_round_timer_expiry(0))
    assert len(rc.prepared_certificate) >= 3
    assert rc.latest_prepared_block == round0_proposal.proposed_block
    assert accepted.accepted_pb is None
    assert not accepted.commit_sent


# =============================================================================
# validPC
# =============================================================================

@pytest.fixture
def pc_round0(chain4, keys4):
    pb = ProposedBlock(block_by(chain4, keys4[1]), 0)
    return pb, make_pc(pb, keys4[1], [keys4[0], keys4[2]])


def _proposer_fn(chain4):
    return lambda r: select_proposer(chain4, r)


def test_valid_pc_accepts_well_formed_certificate(chain4, pc_round0):
    _, pc = pc_round0
    vs = validators(chain4)
    assert valid_pc(None, 1, 1, vs, _proposer_fn(chain4))
    assert valid_pc(PreparedCertificate(), 1, 1, vs, _proposer_fn(chain4))
    assert valid_pc(pc, 1, 1, vs, _proposer_fn(chain4))
    assert not valid_pc(pc, 0, 1, vs, _proposer_fn(chain4))
    assert not valid_pc(pc, 1, 2, vs, _proposer_fn(chain4))


def test_valid_pc_rejections(chain4, keys4, pc_round0):
    pb, pc = pc_round0
    vs = validators(chain4)
    fn = _proposer_fn(chain4)
    proposal = [m for m in pc.messages if m.kind is MessageKind.PROPOSAL][0]
    prepares = [m for m in pc.messages if m.kind is MessageKind.PREPARE]

    # too small
    assert not valid_pc(PreparedCertificate.of([proposal] + prepares[:1]), 1, 1, vs, fn)
    # proposer's own prepare
    assert not valid_pc(PreparedCertificate.of([proposal, prepares[0], make_prepare(1, 0, pb.digest, keys4[1])]),
                        1, 1, vs, fn)
    # proposal by the wrong validator
    wrong = make_proposal(1, 0, pb, None, keys4[2]).signed
    assert not valid_pc(PreparedCertificate.of([wrong, prepares[0], make_prepare(1, 0, pb.digest, keys4[3])]),
                        1, 1, vs, fn)
    # mixed digests
    other = make_prepare(1, 0, b"\x09" * 32, keys4[3])
    assert not valid_pc(PreparedCertificate.of([proposal, prepares[0], other]), 1, 1, vs, fn)
    # outsider
    outsider = make_prepare(1, 0, pb.digest, key_gen(70)[0])
    assert not valid_pc(PreparedCertificate.of([proposal, prepares[0], outsider]), 1, 1, vs, fn)
    # two proposals
    assert not valid_pc(PreparedCertificate.of([proposal, wrong] + prepares), 1, 1, vs, fn)


# =============================================================================
# Round change
# =============================================================================

def test_round_change_quorum_proposer_proposes_fresh_block(chain4, keys4):
    instance = make_instance(keys4[2], chain4)
    instance.start()
    instance.on_round_timer_expiry(0)
    assert instance.on_message(make_round_change(1, 1, None, None, keys4[0])) == []
    actions = instance.on_message(make_round_change(1, 1, None, None, keys4[1]))
    [proposal] = multicasts(actions)
    assert isinstance(proposal, ProposalMessage)
    assert proposal.round == 1
    assert proposal.proposed_block.round == 1
    assert len(proposal.round_change_certificate) == 3
    assert instance.accepted_pb == proposal.proposed_block


def test_round_change_quorum_non_proposer_only_advances(chain4, keys4):
    instance = make_instance(keys4[0], chain4)
    instance.start()
    actions = []
    for sk in keys4[1:]:
        actions += instance.on_message(make_round_change(1, 2, None, None, sk))
    assert actions == [StartTimer(1, 2, 4 * BASE)]
    assert instance.current_round == 2
    candidate = instance.collect_round_change_certificate()
    assert candidate.round == 2
    assert len(candidate.messages) == 3
    senders = [m.sender for m in candidate.messages]
    assert senders == sorted(senders)


def test_highest_eligible_round_wins(chain4, keys4):
    instance = make_instance(keys4[0], chain4)
    instance.start()
    for r in (2, 5):
        for sk in keys4[1:]:
            instance.on_message(make_round_change(1, r, None, None, sk))
    assert instance.round_change_quorum_rounds() == [2, 5]
    assert instance.current_round == 5
    assert instance.collect_round_change_certificate().round == 5


def test_round_change_with_unbound_piggyback_is_excluded(chain4, keys4, pc_round0):
    pb, pc = pc_round0
    instance = make_instance(keys4[0], chain4)
    instance.start()
    other_pb = ProposedBlock(block_by(chain4, keys4[1], b"other"), 0)
    instance.on_message(make_round_change(1, 2, pc, other_pb, keys4[1]))
    instance.on_message(make_round_change(1, 2, None, None, keys4[2]))
    instance.on_message(make_round_change(1, 2, None, None, keys4[3]))
    assert instance.collect_round_change_certificate() is None
    assert instance.current_round == 0


def test_proposer_reuses_highest_prepared_block(chain4, keys4):
    # PCs at rounds 1 and 3, plus one empty round change, all for round 4
    pb1 = ProposedBlock(block_by(chain4, keys4[2], b"one"), 1)
    pc1 = make_pc(pb1, keys4[2], [keys4[0], keys4[3]])
    pb3 = ProposedBlock(block_by(chain4, keys4[0], b"three"), 3)
    pc3 = make_pc(pb3, keys4[0], [keys4[1], keys4[2]])

    instance = make_instance(keys4[1], chain4)  # proposer of round 4
    instance.start()
    instance.on_message(make_round_change(1, 4, None, None, keys4[0]))
    instance.on_message(make_round_change(1, 4, pc1, pb1, keys4[2]))
    actions = instance.on_message(make_round_change(1, 4, pc3, pb3, keys4[3]))
    [proposal] = multicasts(actions)
    assert proposal.round == 4
    assert proposal.proposed_block.block == pb3.block
    assert proposal.proposed_block.round == 4


# =============================================================================
# Proposals above round 0
# =============================================================================

def test_round_one_proposal_with_empty_certificates(chain4, keys4):
    rcs = [make_round_change(1, 1, None, None, sk) for sk in (keys4[0], keys4[1], keys4[3])]
    pb = ProposedBlock(block_by(chain4, keys4[2]), 1)
    proposal = make_proposal(1, 1, pb, rcc_of(rcs), keys4[2])

    instance = make_instance(keys4[3], chain4)
    instance.start()
    actions = instance.on_message(proposal)
    assert StartTimer(1, 1, 2 * BASE) in actions
    [prepare] = multicasts(actions)
    assert (prepare.kind, prepare.round, prepare.digest) == (MessageKind.PREPARE, 1, pb.digest)
    assert instance.current_round == 1


def test_round_one_proposal_with_short_certificate_is_rejected(chain4, keys4):
    rcs = [make_round_change(1, 1, None, None, sk) for sk in (keys4[0], keys4[1])]
    pb = ProposedBlock(block_by(chain4, keys4[2]), 1)
    instance = make_instance(keys4[3], chain4)
    instance.start()
    assert instance.on_message(make_proposal(1, 1, pb, rcc_of(rcs), keys4[2])) == []
    assert instance.current_round == 0


def test_round_one_proposal_with_mismatched_round_is_rejected(chain4, keys4):
    rcs = [make_round_change(1, 1, None, None, sk) for sk in (keys4[0], keys4[1], keys4[3])]
    pb = ProposedBlock(block_by(chain4, keys4[2]), 0)
    instance = make_instance(keys4[3], chain4)
    instance.start()
    assert instance.on_message(make_proposal(1, 1, pb, rcc_of(rcs), keys4[2])) == []


def test_round_one_proposal_must_carry_prepared_block(chain4, keys4, pc_round0):
    pb0, pc = pc_round0
    rcs = [
        make_round_change(1, 1, pc, pb0, keys4[0]),
        make_round_change(1, 1, None, None, keys4[1]),
        make_round_change(1, 1, None, None, keys4[3]),
    ]
    rehashed = ProposedBlock(pb0.block, 1)
    good = make_proposal(1, 1, rehashed, rcc_of(rcs), keys4[2])
    fresh = make_proposal(1, 1, ProposedBlock(block_by(chain4, keys4[2], b"new"), 1), rcc_of(rcs), keys4[2])

    rejecting = make_instance(keys4[3], chain4)
    rejecting.start()
    assert rejecting.on_message(fresh) == []

    accepting = make_instance(keys4[3], chain4)
    accepting.start()
    [prepare] = multicasts(accepting.on_message(good))
    assert prepare.digest == rehashed.digest


def test_round_one_reproposal_keeps_prepared_round_is_rejected(chain4, keys4, pc_round0):
    pb0, pc = pc_round0
    rcs = [
        make_round_change(1, 1, pc, pb0, keys4[0]),
        make_round_change(1, 1, None, None, keys4[1]),
        make_round_change(1, 1, None, None, keys4[3]),
    ]
    stale = make_proposal(1, 1, pb0, rcc_of(rcs), keys4[2])
    instance = make_instance(keys4[3], chain4)
    instance.start()
    assert instance.on_message(stale) == []
    assert instance.accepted_pb is None


def test_proposer_ignores_own_round_one_proposal(chain4, keys4):
    rcs = [make_round_change(1, 1, None, None, sk) for sk in (keys4[0], keys4[1], keys4[3])]
    proposal = make_proposal(1, 1, ProposedBlock(block_by(chain4, keys4[2]), 1), rcc_of(rcs), keys4[2])
    instance = make_instance(keys4[2], chain4)
    instance.start()
    assert multicasts(instance.on_message(proposal)) == []


# =============================================================================
# Fast-forward
# =============================================================================

def test_fast_forward_jumps_to_lowest_round(chain4, keys4):
    instance = make_instance(keys4[0], chain4, fast_forward=True)
    instance.start()
    assert instance.on_message(make_round_change(1, 3, None, None, keys4[1])) == []
    actions = instance.on_message(make_round_change(1, 5, None, None, keys4[2]))
    assert actions[0] == StartTimer(1, 3, 8 * BASE)
    [rc] = multicasts(actions)
    assert isinstance(rc, RoundChangeMessage)
    assert rc.round == 3
    assert instance.current_round == 3


def test_fast_forward_disabled_never_jumps(chain4, keys4):
    instance = make_instance(keys4[0], chain4, fast_forward=False)
    instance.start()
    instance.on_message(make_round_change(1, 3, None, None, keys4[1]))
    assert instance.on_message(make_round_change(1, 5, None, None, keys4[2])) == []
    assert instance.current_round == 0
    assert instance.fast_forward_round() == 3


def test_fast_forward_ignores_rounds_not_ahead(chain4, keys4):
    instance = make_instance(keys4[0], chain4, fast_forward=True)
    instance.start()
    instance.on_round_timer_expiry(0)
    instance.on_round_timer_expiry(1)
    assert instance.current_round == 2
    assert instance.on_message(make_round_change(1, 1, None, None, keys4[1])) == []
    assert instance.on_message(make_round_change(1, 2, None, None, keys4[2])) == []
    assert instance.current_round == 2


# =============================================================================
# Certificate oracles
# =============================================================================

def _literal_valid_pc(pc, r_limit, vs, proposer_fn) -> bool:
    if not pc:
        return True
    msgs = list(pc.messages)
    proposals = [m for m in msgs if m.kind is MessageKind.PROPOSAL]
    if len(msgs) < vs.quorum or len(proposals) != 1:
        return False
    if any(m.kind not in (MessageKind.PROPOSAL, MessageKind.PREPARE) for m in msgs):
        return False
    senders = [m.sender for m in msgs]
    if len(set(senders)) != len(senders):
        return False
    p = proposals[0]
    if not all(m.height == 1 and m.round == p.round and m.digest == p.digest for m in msgs):
        return False
    if p.round >= r_limit or p.sender != proposer_fn(p.round):
        return False
    return all(m.sender in vs and m.sender != p.sender for m in msgs if m is not p)


def _literal_eligible_rounds(batch, vs, proposer_fn):
    """Rounds for which some subset of the batch is a valid round-change certificate."""
    round_changes = [m for m in batch if isinstance(m, RoundChangeMessage) and m.height == 1]
    eligible = set()
    for subset in combinations(round_changes, vs.quorum):
        r = subset[0].round
        senders = [m.sender for m in subset]
        if any(m.round != r for m in subset) or len(set(senders)) != len(senders):
            continue
        if not all(s in vs for s in senders):
            continue
        ok = True
        for m in subset:
            pc = m.prepared_certificate
            if not _literal_valid_pc(pc, r, vs, proposer_fn):
                ok = False
                break
            if pc and (m.latest_prepared_block is None or prepared_digest(pc)[0] != m.latest_prepared_block.digest):
                ok = False
                break
        if ok:
            eligible.add(r)
    return sorted(eligible)


def _message_pool(chain4, keys4):
    pb_a0 = ProposedBlock(block_by(chain4, keys4[1], b"A"), 0)
    pb_b0 = ProposedBlock(block_by(chain4, keys4[1], b"B"), 0)
    pb_c1 = ProposedBlock(block_by(chain4, keys4[2], b"C"), 1)
    pc_a0 = make_pc(pb_a0, keys4[1], [keys4[0], keys4[2]])
    pc_c1 = make_pc(pb_c1, keys4[2], [keys4[0], keys4[3]])
    pc_short = make_pc(pb_a0, keys4[1], [keys4[0]])
    stranger = key_gen(80)[0]

    pool = []
    for sk in keys4:
        for r in (1, 2, 3):
            pool.append(make_round_change(1, r, None, None, sk))
            pool.append(make_round_change(1, r, pc_a0, pb_a0, sk))
            pool.append(make_round_change(1, r, pc_a0, pb_b0, sk))
        for r in (2, 3):
            pool.append(make_round_change(1, r, pc_c1, pb_c1, sk))
        pool.append(make_round_change(1, 1, pc_c1, pb_c1, sk))
        pool.append(make_round_change(1, 2, pc_short, pb_a0, sk))
    pool.append(make_round_change(1, 1, None, None, stranger))
    pool.append(make_round_change(1, 2, None, None, stranger))
    pool.append(make_proposal(1, 0, pb_a0, None, keys4[1]))
    pool.append(make_prepare(1, 0, pb_a0.digest, keys4[3]))
    pool.append(make_prepare(1, 0, pb_b0.digest, keys4[2]))
    return pool


def test_incremental_certificates_match_power_set_oracle(chain4, keys4):
    pool = _message_pool(chain4, keys4)
    vs = validators(chain4)
    proposer_fn = _proposer_fn(chain4)
    rng = np.random.default_rng(2024)

    for _ in range(10_000):
        size = int(rng.integers(1, 9))
        batch = [pool[i] for i in rng.choice(len(pool), size=size, replace=False)]
        instance = make_instance(keys4[0], chain4)
        instance.start()
        for message in batch:
            instance.on_message(message)
        assert instance.round_change_quorum_rounds() == _literal_eligible_rounds(batch, vs, proposer_fn)


def test_prepared_certificates_are_unique_per_round(chain4, keys4):
    """n=4 with keys4[1] Byzantine: no two valid certificates for one round disagree on the digest."""
    vs = validators(chain4)
    proposer_fn = _proposer_fn(chain4)
    byzantine = keys4[1]
    found_valid = 0

    for r in range(3):
        proposer = next(sk for sk in keys4 if sk.address == proposer_fn(r))
        pb_a = ProposedBlock(block_by(chain4, proposer, b"A"), r)
        pb_b = ProposedBlock(block_by(chain4, proposer, b"B"), r)
        proposals = [make_proposal(1, r, pb_a, None, proposer).signed]
        if proposer is byzantine:
            proposals.append(make_proposal(1, r, pb_b, None, proposer).signed)
        byzantine_prepares = [make_prepare(1, r, pb.digest, byzantine) for pb in (pb_a, pb_b)]
        honest = [sk for sk in keys4 if sk is not proposer and sk is not byzantine]

        for choices in product((pb_a, pb_b, None), repeat=len(honest)):
            honest_prepares = [make_prepare(1, r, pb.digest, sk) for sk, pb in zip(honest, choices) if pb is not None]
            messages = proposals + byzantine_prepares + honest_prepares
            digests = set()
            for k in range(vs.quorum, len(messages) + 1):
                for subset in combinations(messages, k):
                    pc = PreparedCertificate.of(subset)
                    if valid_pc(pc, r + 1, 1, vs, proposer_fn):
                        digests.add(prepared_digest(pc)[0])
                        found_valid += 1
            assert len(digests) <= 1, f"round {r}, choices {choices}"

    assert found_valid > 0


def test_round_is_monotonic_under_random_inputs(chain4, keys4):
    pool = _message_pool(chain4, keys4)
    rng = np.random.default_rng(7)
    for _ in range(200):
        instance = make_instance(keys4[0], chain4, fast_forward=bool(rng.integers(2)))
        instance.start()
        last = instance.current_round
        sent = {}
        for _ in range(12):
            if rng.random() < 0.2:
                actions = instance.on_round_timer_expiry(instance.current_round)
            else:
                actions = instance.on_message(pool[int(rng.integers(len(pool)))])
            assert instance.current_round >= last
            last = instance.current_round
            for message in multicasts(actions):
                if isinstance(message, ProposalMessage) or message.kind is MessageKind.PREPARE:
                    key = message.round
                    assert key not in sent, "more than one proposal or prepare in a round"
                    sent[key] = message.digest
