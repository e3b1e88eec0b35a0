import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _support import hybrid_session
from qcloudsim import hybrid
from qcloudsim.crypto import open_envelope
from qcloudsim.netsim.core import (
    Adversary,
    InterceptionSchedule,
    audit_monotone_time,
    audit_no_cloning,
    knowledge_contains_key,
)


def test_step1_logs_request_once(make_hybrid):
    s = make_hybrid(1)
    msg = hybrid.step1_initiate(s)
    assert len(s.center.request_log) == 1
    ids = open_envelope(msg["request"], s.alice.public_key)
    assert b'"initiator":"alice"' in ids and b'"responder":"bob"' in ids


def test_step1_unknown_responder(make_hybrid):
    s = make_hybrid(1, register_bob=False)
    with pytest.raises(hybrid.UnknownParty):
        hybrid.step1_initiate(s)
    assert s.center.request_log == []


def test_accept_requires_notify(make_hybrid):
    s = make_hybrid(2)
    hybrid.step1_initiate(s)
    with pytest.raises(hybrid.ProtocolOrderError):
        hybrid.step3_accept(s)
    hybrid.step2_notify(s)
    hybrid.step3_accept(s)
    assert s.pair in s.center.ready


def test_notify_requires_request(make_hybrid):
    with pytest.raises(hybrid.ProtocolOrderError):
        hybrid.step2_notify(make_hybrid(2))


def test_decline_fails(make_hybrid):
    t = hybrid.run_hybrid(make_hybrid(3), b"hi", accept=False)
    assert str(t.verdict) == "Failed(Declined)"


def test_tampered_accept_is_tamper(make_hybrid):
    s = make_hybrid(4, adversary=Adversary(tamper_kinds={"accept"}))
    t = hybrid.run_hybrid(s, b"hi")
    assert str(t.verdict) == "Failed(Tamper)"


def test_clean_distribution_agrees(make_hybrid):
    s = make_hybrid(5)
    hybrid.step1_initiate(s)
    hybrid.step2_notify(s)
    hybrid.step3_accept(s)
    active = hybrid.step4_distribute(s)
    assert np.array_equal(s.alice.key_bits, active.key_bits)
    assert np.array_equal(s.bob.key_bits, active.key_bits)
    assert len(s.alice.session_key.key) == 16
    assert s.alice.session_key == s.bob.session_key


def test_step5_needs_key(make_hybrid):
    s = make_hybrid(6)
    before = s.net.message_count
    with pytest.raises(hybrid.MissingSessionKey):
        hybrid.step5_send(s, b"hi")
    assert s.net.message_count == before


def test_clean_run_delivers(make_hybrid):
    s = make_hybrid(7)
    t = hybrid.run_hybrid(s, b"hi")
    assert str(t.verdict) == "Delivered"
    assert t.delivered_payload == b"hi"
    assert t.payload_bits.startswith("01101000" + "01101001")
    sid = s.alice.session_id
    assert s.alice.session_key == s.bob.session_key == hybrid.derive_symmetric_key(s.center.sessions[sid].key_bits)
    assert all(q == 0 for q in t.rounds[-1].qber.values())


def test_alice_leg_attack_aborts_that_leg(make_hybrid):
    adv = Adversary(quantum_targets={"alice"})
    s = make_hybrid(8, InterceptionSchedule.first_rounds(1), adversary=adv)
    t = hybrid.run_hybrid(s, b"hi")
    assert t.rounds[0].outcome == "leg-abort:alice"
    assert str(t.verdict) == "RekeyedThenDelivered(1)"


def test_persistent_attack_exhausts_retries(make_hybrid):
    s = make_hybrid(9, InterceptionSchedule.constant(1.0))
    t = hybrid.run_hybrid(s, b"hi", retry_cap=5)
    assert str(t.verdict) == "Failed(RetriesExhausted)"
    assert len(t.rounds) == 6
    assert t.delivered_payload is None


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 3))
def test_rekey_liveness_and_order(seed, r):
    s = hybrid_session(seed, InterceptionSchedule.first_rounds(r))
    t = hybrid.run_hybrid(s, b"payload", retry_cap=5)
    assert t.verdict.delivered
    assert t.verdict.rekeys <= r
    assert hybrid.valid_step_order(t.step_sequence())
    assert audit_no_cloning(s.net.trace) and audit_monotone_time(s.net.trace)
    assert not knowledge_contains_key(s.net.adversary.knowledge, t.session_key_bits)
    assert not knowledge_contains_key(s.net.adversary.knowledge, t.session_key)


def test_audit_catches_a_key_mismatch(make_hybrid):
    s = make_hybrid(10)
    hybrid.step1_initiate(s)
    hybrid.step2_notify(s)
    hybrid.step3_accept(s)
    hybrid.step4_distribute(s)
    # corrupt Bob's copy of everything the photons gave him
    s.bob._measured = 1 - s.bob._measured
    s.bob.session_key = hybrid.derive_symmetric_key(1 - s.bob.key_bits)
    hybrid.step5_send(s, b"hi")
    assert hybrid.step6_receive(s) is None
    assert not hybrid.step7_audit(s)
    assert s.center.active_for(s.pair) is None
    assert s.alice.session_key is None


def test_step_order_validator():
    assert hybrid.valid_step_order([1, 2, 3, 4, 5, 6, 7])
    assert hybrid.valid_step_order([1, 2, 3, 4, 4, 4, 5, 5, 6, 7, 7, 4, 5, 6, 7])
    assert hybrid.valid_step_order([1, 2])
    assert not hybrid.valid_step_order([1, 3])
    assert not hybrid.valid_step_order([2, 3])
    assert not hybrid.valid_step_order([1, 2, 3, 4, 6])


def test_rekey_counter_only_increases(make_hybrid):
    s = make_hybrid(11, InterceptionSchedule.first_rounds(3))
    t = hybrid.run_hybrid(s, b"hi")
    assert s.center.rekey_counter == t.verdict.rekeys
