"""Acceptance criteria, one test each.

Each test records a single PASS/FAIL line that the terminal summary prints
(see conftest.py). Run just this file with ``pytest tests/test_acceptance.py``.
"""

import math
import time

import numpy as np
import pytest

from _support import ACCEPTANCE_LINES
from qcloudsim import algorithms as alg
from qcloudsim import bb84, cloud, qsim
from qcloudsim.crypto import rsa_decrypt, rsa_encrypt, rsa_keygen
from qcloudsim.netsim.core import (
    Adversary,
    InterceptionSchedule,
    Network,
    audit_db_writers,
    audit_no_cloning,
    knowledge_contains_key,
)
from qcloudsim.netsim.scenario import SHIPPED_SUITE, ScenarioConfig, run_scenario
from qcloudsim.photonics import Eavesdropper, QuantumChannel


@pytest.fixture
def criterion(request):
    """Yield a dict for details; record one line whether the test passes or fails."""
    number, title = request.node.get_closest_marker("ac").args
    details = {}
    yield details
    ok = details.pop("_ok", False)
    extra = ", ".join(f"{k}={v}" for k, v in details.items())
    ACCEPTANCE_LINES[number] = f"[{'PASS' if ok else 'FAIL'}] AC{number:>2} {title}: {extra}"


def done(details):
    details["_ok"] = True


@pytest.mark.ac(1, "Shor factors 15 and 21")
def test_ac01_shor(criterion):
    start = time.perf_counter()
    ok = {}
    for n, expected in ((15, (3, 5)), (21, (3, 7))):
        result = run_scenario(ScenarioConfig("shor", 1, {"n": n, "runs": 100}))
        ok[n] = sum(r.factors == expected for r in result.transcript)
        criterion[f"n{n}"] = f"{ok[n]}/100"
    elapsed = time.perf_counter() - start
    criterion["seconds"] = f"{elapsed:.1f}"
    assert ok == {15: 100, 21: 100}
    assert elapsed < 60
    done(criterion)


@pytest.mark.ac(2, "order finding matches brute force")
def test_ac02_order_finding(criterion):
    total = matched = exhausted = wrong = 0
    for n in (15, 21, 33, 35):
        for a in range(2, n):
            if math.gcd(a, n) != 1:
                continue
            truth = alg.classical_order(a, n)
            for seed in range(5):
                total += 1
                try:
                    r = alg.find_order(a, n, np.random.default_rng([n, a, seed]))
                except alg.RetriesExhausted:
                    exhausted += 1
                    continue
                if r == truth:
                    matched += 1
                else:
                    wrong += 1
    criterion.update(attempts=total, matched=matched, exhausted=exhausted, wrong=wrong)
    assert wrong == 0
    assert matched >= 0.99 * total
    done(criterion)


@pytest.mark.ac(3, "Grover matches the closed form")
def test_ac03_grover(criterion):
    worst = 0.0
    cases = 0
    for q in range(1, 7):
        size = 1 << q
        for k in range(2 * math.floor(math.pi * math.sqrt(size) / 4) + 1):
            r = alg.grover_search(0, q, k, np.random.default_rng(k))
            worst = max(worst, abs(r.success_probability - alg.grover_success_closed_form(size, k)))
            cases += 1
    n4 = alg.grover_search(3, 2, 1, np.random.default_rng(0)).success_probability
    criterion.update(cases=cases, max_error=f"{worst:.1e}", n4_k1=f"{n4:.12f}")
    assert worst < 1e-10
    assert abs(n4 - 1.0) < 1e-10
    done(criterion)


@pytest.mark.ac(4, "QFT round trip is the identity")
def test_ac04_qft(criterion):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for n in range(2, 9):
        for _ in range(100):
            v = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
            state = qsim.StateVector(n, v / np.linalg.norm(v))
            back = qsim.qft(qsim.inverse_qft(state))
            worst = max(worst, float(np.max(np.abs(back.amplitudes - state.amplitudes))))
    criterion["max_error"] = f"{worst:.1e}"
    assert worst < 1e-10
    done(criterion)


@pytest.mark.ac(5, "BB84 statistics")
def test_ac05_bb84_statistics(criterion):
    start = time.perf_counter()
    runs, photons = 200, 4096
    for p in (0.0, 0.25, 0.5, 1.0):
        qber_hits = sample_bits = 0
        sifted = []
        for seed in range(runs):
            r = run_scenario(ScenarioConfig("bb84", seed, {"photons": photons, "intercept": p}))
            t = r.transcript
            sifted.append(len(t.sifted_indices))
            qber_hits += t.sample_mismatches
            sample_bits += len(t.sample_indices)
            if p == 0.0:
                assert t.qber == 0.0
        mean_qber = qber_hits / sample_bits
        expected = p / 4
        sigma = math.sqrt(expected * (1 - expected) / sample_bits)
        assert abs(mean_qber - expected) <= 3 * sigma
        if p == 0.0:
            frac = np.sum(sifted) / (runs * photons)
            assert abs(frac - 0.5) <= 3 * math.sqrt(0.25 / (runs * photons))
            criterion["sifted_fraction"] = f"{frac:.4f}"
        criterion[f"qber@{p}"] = f"{mean_qber:.4f}"
    elapsed = time.perf_counter() - start
    criterion["seconds"] = f"{elapsed:.1f}"
    assert elapsed < 30
    done(criterion)


@pytest.mark.ac(6, "detection law 1-(3/4)^k")
def test_ac06_detection_law(criterion):
    runs = 10_000
    for k in (1, 5, 10, 20):
        # any disclosed mismatch aborts: threshold below 1/k
        config = bb84.Bb84Config(num_photons=128, sample_size=k, qber_threshold=0.5 / k, min_key_bits=8)
        aborts = 0
        for seed in range(runs):
            channel = QuantumChannel(eavesdropper=Eavesdropper(np.random.default_rng([k, seed, 3]), 1.0))
            t = bb84.run_bb84(config, channel, np.random.default_rng([k, seed, 1]), np.random.default_rng([k, seed, 2]))
            aborts += t.abort_reason is bb84.AbortReason.QBER_EXCEEDED
        expected = bb84.detection_probability(k)
        sigma = math.sqrt(expected * (1 - expected) / runs)
        criterion[f"k{k}"] = f"{aborts / runs:.4f}~{expected:.4f}"
        assert abs(aborts / runs - expected) <= 3 * sigma
    done(criterion)


@pytest.mark.ac(7, "textbook RSA")
def test_ac07_rsa(criterion):
    pair = rsa_keygen(61, 53, 17)
    failures = sum(rsa_decrypt(rsa_encrypt(m, pair), pair) != m for m in range(3233))
    criterion.update(d=pair.private_exponent, c65=rsa_encrypt(65, pair), roundtrip_failures=failures)
    assert pair.private_exponent == 2753
    assert rsa_encrypt(65, pair) == 2790 and rsa_decrypt(2790, pair) == 65
    assert failures == 0
    done(criterion)


@pytest.mark.ac(8, "hybrid protocol")
def test_ac08_hybrid(criterion):
    clean = run_scenario(ScenarioConfig("hybrid", 0, {"payload": "quarterly report"}))
    assert clean.verdict == "Delivered"
    assert clean.transcript.delivered_payload == b"quarterly report"
    false_deliveries = rekeyed = 0
    for seed in range(1000):
        r = run_scenario(ScenarioConfig("hybrid", seed, {"intercept": 1.0, "attack_rounds": 1}))
        t = r.transcript
        first = t.rounds[0]
        # the round under attack must never be the one that delivers
        if first.outcome == "delivered" or t.verdict.rekeys == 0:
            false_deliveries += 1
        rekeyed += t.verdict.delivered and t.verdict.rekeys >= 1
    criterion.update(seeds=1000, false_deliveries=false_deliveries, rekeyed_then_delivered=rekeyed)
    assert false_deliveries == 0
    assert rekeyed == 1000
    done(criterion)


@pytest.mark.ac(9, "cloud protocol")
def test_ac09_cloud(criterion):
    sso = run_scenario(ScenarioConfig("cloud", 0, {"clients": 1, "services": 2}))
    assert sso.success and sso.stats["delivered"] == 2
    assert sum(r.action == "send:AS_REQ" for r in sso.trace) == 1

    # ticket presented exactly at its expiry instant
    net = Network(1)
    kdc = cloud.Kdc(net, lifetime=50)
    svc = cloud.service("svc", net.rng("setup:svc"))
    kdc.register(svc)
    alice = cloud.Client(cloud.customer("alice", "pw"))
    kdc.register(alice.principal)
    tgt = cloud.as_exchange(net, alice, kdc)
    net.now = tgt.expiry - 1  # the send advances the clock to expiry
    with pytest.raises(cloud.Expired):
        cloud.tgs_exchange(net, alice, kdc, "svc")
    criterion["boundary"] = "rejected"

    undetected = audits_failed = 0
    for seed in range(1000):
        r = run_scenario(ScenarioConfig("cloud", seed, {"services": 1, "intercept": 1.0, "retry_cap": 0}))
        undetected += r.stats["delivered"]
        audits_failed += not audit_db_writers(r.trace, "kdc")
    criterion.update(attacked_sessions=1000, undetected=undetected, audit_failures=audits_failed)
    assert undetected == 0 and audits_failed == 0
    done(criterion)


@pytest.mark.ac(10, "adversary never holds an accepted key")
def test_ac10_adversary_exclusion(criterion):
    accepted = leaks = 0
    for name, (kind, params) in SHIPPED_SUITE.items():
        for seed in range(100):
            r = run_scenario(ScenarioConfig(kind, seed, params))
            if r.adversary is None:
                continue
            for key in r.accepted_keys:
                accepted += 1
                leaks += knowledge_contains_key(r.adversary.knowledge, key)
            assert audit_no_cloning(r.trace)
    criterion.update(accepted_keys=accepted, leaks=leaks)
    assert accepted > 0
    assert leaks == 0
    done(criterion)


@pytest.mark.ac(11, "deterministic traces")
def test_ac11_determinism(criterion):
    mismatched = []
    for name, (kind, params) in SHIPPED_SUITE.items():
        for seed in (0, 1, 2):
            a = run_scenario(ScenarioConfig(kind, seed, params)).digest
            b = run_scenario(ScenarioConfig(kind, seed, params)).digest
            if a != b:
                mismatched.append(f"{name}/{seed}")
    criterion.update(scenarios=len(SHIPPED_SUITE) * 3, mismatched=len(mismatched))
    assert not mismatched
    done(criterion)
