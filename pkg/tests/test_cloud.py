import numpy as np
import pytest

from qcloudsim import cloud
from qcloudsim.netsim.core import (
    Adversary,
    InterceptionSchedule,
    Network,
    audit_db_writers,
    knowledge_contains_key,
)


def world(seed=1, schedule=None, services=2, lifetime=cloud.TICKET_LIFETIME):
    net = Network(seed, Adversary(), schedule)
    kdc = cloud.Kdc(net, lifetime=lifetime)
    endpoints = []
    for j in range(services):
        p = cloud.service(f"svc{j}", net.rng(f"setup:svc{j}"))
        kdc.register(p)
        endpoints.append(cloud.ServiceEndpoint(p))
    alice = cloud.Client(cloud.customer("alice", "correct horse"))
    kdc.register(alice.principal)
    return net, kdc, alice, endpoints


def test_as_exchange_issues_tgt():
    net, kdc, alice, _ = world()
    tgt = cloud.as_exchange(net, alice, kdc)
    assert tgt.expiry == tgt.issued + kdc.lifetime
    assert alice.tgt is not None and alice.tgs_key == tgt.session_key


def test_as_exchange_wrong_password():
    net, kdc, alice, _ = world()
    impostor = cloud.Client(cloud.customer("alice", "wrong"))
    with pytest.raises(cloud.AuthFailed):
        cloud.as_exchange(net, impostor, kdc)
    assert impostor.tgt is None


def test_as_exchange_unknown_customer():
    net, kdc, _, _ = world()
    with pytest.raises(cloud.UnknownPrincipal):
        cloud.as_exchange(net, cloud.Client(cloud.customer("mallory", "x")), kdc)


def test_as_replay_outside_window():
    net, kdc, alice, _ = world()
    stale = cloud.as_request(net, alice, kdc)
    net.tick(cloud.AUTHENTICATOR_WINDOW + 1)
    with pytest.raises(cloud.Skew):
        cloud.as_exchange(net, alice, kdc, stale)


def test_tgs_exchange_and_expiry_boundary():
    net, kdc, alice, (svc, _) = world(lifetime=100)
    tgt = cloud.as_exchange(net, alice, kdc)
    ticket = cloud.tgs_exchange(net, alice, kdc, svc.name)
    assert ticket.customer == "alice" and ticket.expiry <= tgt.expiry
    # the send itself ticks the clock, so stop one second short of expiry
    net.now = tgt.expiry - 1
    with pytest.raises(cloud.Expired):
        cloud.tgs_exchange(net, alice, kdc, svc.name)


def test_ticket_validity_is_half_open():
    assert cloud.ticket_valid(10, 20, 10)
    assert cloud.ticket_valid(10, 20, 19)
    assert not cloud.ticket_valid(10, 20, 20)
    assert not cloud.ticket_valid(10, 20, 9)


def test_tgs_authenticator_skew_and_checksum():
    net, kdc, alice, (svc, _) = world()
    cloud.as_exchange(net, alice, kdc)
    old = cloud.tgs_request(net, alice, kdc, svc.name, stamp=net.now)
    net.tick(cloud.AUTHENTICATOR_WINDOW + 5)
    with pytest.raises(cloud.Skew):
        cloud.tgs_exchange(net, alice, kdc, svc.name, old)
    # authenticator for one service presented for another fails its checksum
    wrong = cloud.tgs_request(net, alice, kdc, "svc1")
    wrong.fields["service"] = svc.name
    with pytest.raises(cloud.ChecksumFailed):
        cloud.tgs_exchange(net, alice, kdc, svc.name, wrong)


def test_cs_exchange_echoes_timestamp_and_rejects_replay():
    net, kdc, alice, (svc, _) = world()
    cloud.as_exchange(net, alice, kdc)
    cloud.tgs_exchange(net, alice, kdc, svc.name)
    request = cloud.cs_request(net, alice, svc.name)
    stamp = net.now
    assert cloud.cs_exchange(net, alice, svc, request) == stamp
    with pytest.raises(cloud.ReplayDetected):
        cloud.cs_exchange(net, alice, svc, request)


def test_cs_exchange_wrong_service_key():
    net, kdc, alice, (svc, other) = world()
    cloud.as_exchange(net, alice, kdc)
    cloud.tgs_exchange(net, alice, kdc, svc.name)
    forged = cloud.ServiceEndpoint(cloud.Principal(svc.principal.kind, svc.name, other.principal.key))
    with pytest.raises(cloud.AuthFailed):
        cloud.cs_exchange(net, alice, forged)


def test_csp_register_bases():
    net, kdc, _, (a, b) = world()
    first = cloud.csp_register_bases(net, a, kdc, 2048)
    assert len(kdc.csp_bases[a.name]) == 2048
    second = cloud.csp_register_bases(net, a, kdc, 2048)
    assert kdc.csp_bases[a.name] is second and not np.array_equal(first.bases, second.bases)
    other = cloud.csp_register_bases(net, b, kdc, 2048)
    assert not np.array_equal(other.bases, second.bases)


def test_client_request_access():
    net, kdc, alice, (svc, _) = world(lifetime=50)
    cloud.as_exchange(net, alice, kdc)
    cloud.csp_register_bases(net, svc, kdc, 512)
    first = cloud.client_request_access(net, alice, kdc, svc.name)
    second = cloud.client_request_access(net, alice, kdc, svc.name)
    assert kdc.pending[("alice", svc.name)] is second and first is not second
    net.now += 100
    kdc.pending.clear()
    with pytest.raises(cloud.Expired):
        cloud.client_request_access(net, alice, kdc, svc.name)
    assert not kdc.pending


def test_session_key_bits_examples():
    rng = np.random.default_rng(0)
    bases = rng.integers(0, 2, 256)
    key_bits = rng.integers(0, 2, 256)
    assert np.array_equal(cloud.session_key_bits(bases, bases, key_bits), key_bits[:128])
    assert len(cloud.matching_positions(bases, bases)) == 256
    with pytest.raises(cloud.InsufficientAgreement):
        cloud.session_key_bits(bases, 1 - bases, key_bits)


def test_random_base_agreement_is_binomial():
    rng = np.random.default_rng(1)
    inside = 0
    for _ in range(1000):
        m = len(cloud.matching_positions(rng.integers(0, 2, 2048), rng.integers(0, 2, 2048)))
        inside += abs(m - 1024) <= 3 * np.sqrt(2048 / 4)
    # 3 sigma covers 99.73%; allow sampling slack on 1000 draws
    assert inside >= 990


def establish(net, kdc, alice, svc, n=512):
    cloud.as_exchange(net, alice, kdc)
    cloud.csp_register_bases(net, svc, kdc, n)
    cloud.client_request_access(net, alice, kdc, svc.name)
    record = cloud.kdc_generate_session_key(net, kdc, alice.name, svc.name)
    key = cloud.kdc_send_csp_bases(net, kdc, alice, svc.name)
    return record, key


def test_clean_key_agreement_and_delivery():
    net, kdc, alice, (svc, _) = world()
    record, key = establish(net, kdc, alice, svc)
    assert key == record.session_key
    assert cloud.client_send_file(net, alice, svc, kdc, b"file bytes") == b"file bytes"


def test_intercepted_key_mismatch_is_detected():
    net, kdc, alice, (svc, _) = world(schedule=InterceptionSchedule.constant(1.0))
    record, key = establish(net, kdc, alice, svc)
    assert key != record.session_key
    with pytest.raises(cloud.IntrusionSuspected):
        cloud.client_send_file(net, alice, svc, kdc, b"file bytes")


def test_unknown_client_has_no_session():
    net, kdc, alice, (svc, _) = world()
    establish(net, kdc, alice, svc)
    with pytest.raises(cloud.NoSession):
        kdc.db.lookup("nobody", svc.name)


def test_only_kdc_writes_the_database():
    net, kdc, alice, (svc, _) = world()
    record, _ = establish(net, kdc, alice, svc)
    with pytest.raises(cloud.WriteDenied):
        kdc.db.write(svc.name, record)
    with pytest.raises(cloud.WriteDenied):
        kdc.db.invalidate("alice", "alice", svc.name)
    assert audit_db_writers(net.trace, kdc.name)


def test_invalidated_record_never_decrypts():
    net, kdc, alice, (svc, _) = world()
    establish(net, kdc, alice, svc)
    kdc.db.invalidate(kdc.name, alice.name, svc.name)
    with pytest.raises(cloud.NoSession):
        cloud.client_send_file(net, alice, svc, kdc, b"late")


def first_transmit_time(seed):
    net, kdc, alice, (svc, _) = world(seed)
    cloud.as_exchange(net, alice, kdc)
    cloud.establish_and_send(net, kdc, alice, svc, b"f", n=512)
    return next(r.sim_time for r in net.trace if r.action == "transmit")


def test_one_shot_attack_then_clean_succeeds_on_retry_two():
    # runs are deterministic, so a clean dry run tells when the first train leaves
    t = first_transmit_time(1)
    net, kdc, alice, (svc, _) = world(1, schedule=InterceptionSchedule([(0, t + 1, 1.0)]))
    cloud.as_exchange(net, alice, kdc)
    out = cloud.establish_and_send(net, kdc, alice, svc, b"f", n=512)
    assert out.delivered and out.restarts == 1


def test_persistent_attack_fails_after_exactly_five_restarts():
    net, kdc, alice, (svc, _) = world(schedule=InterceptionSchedule.constant(1.0))
    cloud.as_exchange(net, alice, kdc)
    out = cloud.establish_and_send(net, kdc, alice, svc, b"f", n=512, retry_cap=5)
    assert out.verdict == "Failed" and out.restarts == 5
    assert sum(r.action == "intrusion" for r in net.trace) == 5


def test_single_sign_on():
    net = Network(3, Adversary())
    result = cloud.run_cloud(net, clients=1, services=2, n=512)
    assert result.summary()["delivered"] == 2
    assert result.password_entries == {"client0": 1}
    assert sum(r.action == "send:AS_REQ" for r in net.trace) == 1
    adversary = net.adversary
    for s in result.sessions:
        assert not knowledge_contains_key(adversary.knowledge, s.session_key)


def test_noisy_channel_mismatch_surfaces_in_stats():
    net = Network(4, Adversary(), noise=0.01)
    result = cloud.run_cloud(net, clients=3, services=2, n=512)
    summary = result.summary()
    assert summary["sessions"] == 6
    # 128 bits at 1% flip rate match with probability 0.99^128, about 0.28
    assert summary["rekeys"] > 0
