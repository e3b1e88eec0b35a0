"""RSA identities plus a QKD center that brokers session keys between two parties.

Message flow (one line per numbered step, 4 to 7 repeat on rekey)::

    1  Alice -> QKD    E_PR-Alice(ID_Alice || ID_Bob)
    2  QKD   -> Bob    E_PU-Bob(ID_Alice || ID_Bob)
    3  Bob   -> QKD    E_PR-Bob(ID_Alice || ID_Bob)
    4  QKD   -> both   photon trains, then E_PU-<party>(ID_Alice || ID_Bob || session metadata)
    5  Alice -> Bob    E_PR-Alice(E_SK(message) || ID_Bob);  Alice -> QKD audit bits
    6  Bob   -> QKD    audit bits
    7  QKD   -> both   verdict; a failed audit discards SK and returns to step 4

The session key never travels in an envelope. In step 4 the center sends
one train of (bit, basis) photons down each leg; positions where the
center and both parties happened to use the same basis carry the key. Two
disjoint subsets of those positions are held out: check bits, disclosed and
compared inside step 4, and audit bits, disclosed only after the message in
steps 5 and 6.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .bb84 import DEFAULT_QBER_THRESHOLD, estimate_qber
from .crypto import (
    KEY_BITS,
    CryptoError,
    Envelope,
    RsaKeyPair,
    RsaPublicKey,
    Scheme,
    SymmetricKey,
    TagMismatch,
    bytes_to_bits,
    derive_symmetric_key,
    open_envelope,
    seal,
)
from .netsim.core import ChannelKind, Message, Network
from .photonics import PhotonTrain, bases_to_string, bits_to_string

DEFAULT_RETRY_CAP = 5
DEFAULT_PHOTONS = 2048
CHECK_FRACTION = 0.25
AUDIT_FRACTION = 0.25


class HybridError(Exception):
    pass


class UnknownParty(HybridError):
    pass


class ProtocolOrderError(HybridError):
    pass


class MissingSessionKey(HybridError):
    pass


class ExchangeFailed(HybridError):
    """Terminates the run with a Failed verdict."""

    def __init__(self, reason: "FailureReason", detail: str = ""):
        super().__init__(f"{reason.value}: {detail}" if detail else reason.value)
        self.reason = reason


class KeyEstablishmentAborted(HybridError):
    """Step 4 produced no key; the center rekeys."""


class FailureReason(str, enum.Enum):
    DECLINED = "Declined"
    TAMPER = "Tamper"
    RETRIES_EXHAUSTED = "RetriesExhausted"


@dataclass
class Party:
    name: str
    keys: RsaKeyPair
    session_key: SymmetricKey | None = None
    session_id: str | None = None
    key_bits: np.ndarray | None = field(default=None, repr=False)
    received: bytes | None = None
    _bases: np.ndarray | None = field(default=None, repr=False)
    _measured: np.ndarray | None = field(default=None, repr=False)
    _audit_positions: np.ndarray | None = field(default=None, repr=False)

    @property
    def public_key(self) -> RsaPublicKey:
        return self.keys.public()


@dataclass
class ActiveSession:
    session_id: str
    pair: tuple[str, str]
    key_bits: np.ndarray
    key_positions: np.ndarray
    check_positions: np.ndarray
    audit_positions: np.ndarray
    center_bits: np.ndarray


@dataclass
class QkdCenter:
    name: str = "qkd"
    photons: int = DEFAULT_PHOTONS
    qber_threshold: float = DEFAULT_QBER_THRESHOLD
    directory: dict[str, RsaPublicKey] = field(default_factory=dict)
    request_log: list[tuple[str, str, int]] = field(default_factory=list)
    notified: set[tuple[str, str]] = field(default_factory=set)
    ready: set[tuple[str, str]] = field(default_factory=set)
    sessions: dict[str, ActiveSession] = field(default_factory=dict)
    rekey_counter: int = 0
    _session_seq: int = 0

    def __post_init__(self) -> None:
        expected = self.photons / 4 * (1 - CHECK_FRACTION - AUDIT_FRACTION)
        if expected < KEY_BITS:
            raise ValueError(f"{self.photons} photons give about {expected:.0f} key positions, need {KEY_BITS}")

    def register(self, party: Party) -> None:
        self.directory[party.name] = party.public_key

    def active_for(self, pair: tuple[str, str]) -> ActiveSession | None:
        for s in self.sessions.values():
            if s.pair == pair:
                return s
        return None

    def discard(self, pair: tuple[str, str]) -> None:
        for sid in [sid for sid, s in self.sessions.items() if s.pair == pair]:
            del self.sessions[sid]
        self.rekey_counter += 1


@dataclass(frozen=True)
class StepRecord:
    step: int
    sender: str
    receiver: str
    notation: str
    channel: ChannelKind


@dataclass
class RoundRecord:
    index: int
    start_time: int
    intercepted_photons: int = 0
    qber: dict[str, float] = field(default_factory=dict)
    outcome: str = ""


@dataclass
class HybridVerdict:
    kind: str
    rekeys: int = 0
    reason: FailureReason | None = None

    @property
    def delivered(self) -> bool:
        return self.kind in ("Delivered", "RekeyedThenDelivered")

    def __str__(self) -> str:
        if self.kind == "RekeyedThenDelivered":
            return f"RekeyedThenDelivered({self.rekeys})"
        if self.kind == "Failed":
            return f"Failed({self.reason.value})"
        return self.kind


@dataclass
class HybridTranscript:
    steps: list[StepRecord] = field(default_factory=list)
    rounds: list[RoundRecord] = field(default_factory=list)
    verdict: HybridVerdict | None = None
    payload_bits: str = ""
    delivered_payload: bytes | None = None
    session_key: SymmetricKey | None = None
    session_key_bits: str | None = None

    def step_sequence(self) -> list[int]:
        return [s.step for s in self.steps]


_ALLOWED_NEXT = {
    1: {1, 2},
    2: {2, 3},
    3: {3, 4},
    4: {4, 5},
    5: {5, 6},
    6: {6, 7},
    7: {7, 4},
}


def valid_step_order(steps: list[int]) -> bool:
    if not steps:
        return True
    if steps[0] != 1:
        return False
    return all(b in _ALLOWED_NEXT[a] for a, b in zip(steps, steps[1:]))


@dataclass
class HybridSession:
    net: Network
    center: QkdCenter
    alice: Party
    bob: Party
    transcript: HybridTranscript = field(default_factory=HybridTranscript)

    @property
    def pair(self) -> tuple[str, str]:
        return (self.alice.name, self.bob.name)

    def _send(self, step: int, message: Message, notation: str) -> Message:
        self.transcript.steps.append(
            StepRecord(step, message.sender, message.receiver, notation, ChannelKind.CLASSICAL)
        )
        return self.net.send(message, session=self.session_label)

    @property
    def session_label(self) -> str:
        return f"{self.alice.name}-{self.bob.name}"


def _ids(a: str, b: str, **extra) -> bytes:
    body = {"initiator": a, "responder": b}
    body.update(extra)
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _open_ids(envelope: Envelope, key) -> dict:
    try:
        return json.loads(open_envelope(envelope, key))
    except TagMismatch as exc:
        raise ExchangeFailed(FailureReason.TAMPER, str(exc)) from exc


def step1_initiate(s: HybridSession) -> Message:
    a, b, c = s.alice, s.bob, s.center
    for name in (a.name, b.name):
        if name not in c.directory:
            raise UnknownParty(name)
    env = seal(Scheme.PRIVATE_KEY, _ids(a.name, b.name), a.keys.private(), s.net.rng(a.name))
    s._send(1, Message("initiate", a.name, c.name, {"request": env}), env.notation)
    msg = s.net.receive(c.name, "initiate")
    ids = _open_ids(msg["request"], c.directory[a.name])
    if (ids["initiator"], ids["responder"]) != s.pair:
        raise ExchangeFailed(FailureReason.TAMPER, "identity mismatch in request")
    c.request_log.append((a.name, b.name, s.net.now))
    return msg


def step2_notify(s: HybridSession) -> Message:
    c, b = s.center, s.bob
    if not any(r[:2] == s.pair for r in c.request_log):
        raise ProtocolOrderError("no pending request to notify")
    env = seal(Scheme.PUBLIC_KEY, _ids(*s.pair), c.directory[b.name], s.net.rng(c.name))
    s._send(2, Message("notify", c.name, b.name, {"notice": env}), env.notation)
    msg = s.net.receive(b.name, "notify")
    _open_ids(msg["notice"], b.keys.private())
    c.notified.add(s.pair)
    return msg


def step3_accept(s: HybridSession, accept: bool = True) -> Message:
    c, b = s.center, s.bob
    if s.pair not in c.notified:
        raise ProtocolOrderError("accept before notify")
    decision = "accept" if accept else "decline"
    env = seal(
        Scheme.PRIVATE_KEY, _ids(*s.pair, decision=decision), b.keys.private(), s.net.rng(b.name)
    )
    s._send(3, Message("accept", b.name, c.name, {"reply": env}), env.notation)
    msg = s.net.receive(c.name, "accept")
    body = _open_ids(msg["reply"], c.directory[b.name])
    if body.get("decision") != "accept":
        raise ExchangeFailed(FailureReason.DECLINED)
    c.ready.add(s.pair)
    return msg


def _split_common(common: np.ndarray, rng: np.random.Generator):
    shuffled = rng.permutation(common)
    n_check = int(round(CHECK_FRACTION * len(common)))
    n_audit = int(round(AUDIT_FRACTION * len(common)))
    check = np.sort(shuffled[:n_check])
    audit = np.sort(shuffled[n_check : n_check + n_audit])
    rest = np.sort(shuffled[n_check + n_audit :])
    return check, audit, rest


def step4_distribute(s: HybridSession) -> ActiveSession:
    c, net = s.center, s.net
    if s.pair not in c.ready:
        raise ProtocolOrderError("pair is not ready for key distribution")
    round_ = RoundRecord(len(s.transcript.rounds), net.next_slot())
    s.transcript.rounds.append(round_)
    rng_c = net.rng(c.name)
    n = c.photons
    bits = rng_c.integers(0, 2, size=n, dtype=np.uint8)
    bases = rng_c.integers(0, 2, size=n, dtype=np.uint8)

    parties = (s.alice, s.bob)
    for p in parties:
        # the center knows the classical values, so preparing two trains is not cloning
        report = net.transmit_photons(c.name, p.name, PhotonTrain(bits, bases), s.session_label)
        round_.intercepted_photons += report.intercepted
        s.transcript.steps.append(StepRecord(4, c.name, p.name, "photons(+,x)", ChannelKind.QUANTUM))
    for p in parties:
        p._bases = net.rng(p.name).integers(0, 2, size=n, dtype=np.uint8)
        p._measured = net.receive_photons(p.name, p._bases, s.session_label)
        s._send(4, Message("bases", p.name, c.name, {"bases": bases_to_string(p._bases)}), "clear")
    reported = {}
    for p in parties:
        msg = net.receive(c.name, "bases")
        reported[msg.sender] = np.frombuffer(msg["bases"].encode("ascii"), dtype=np.uint8) == ord("x")
    common = np.flatnonzero(
        (reported[s.alice.name] == bases.astype(bool)) & (reported[s.bob.name] == bases.astype(bool))
    )
    check, audit, rest = _split_common(common, rng_c)

    c._session_seq += 1
    session_id = f"sk-{c._session_seq}"
    meta = dict(
        session=session_id,
        center_bases=bases_to_string(bases),
        check=check.tolist(),
        audit=audit.tolist(),
        key=rest[:KEY_BITS].tolist(),
    )
    for p in parties:
        env = seal(Scheme.PUBLIC_KEY, _ids(*s.pair, **meta), c.directory[p.name], rng_c)
        s._send(4, Message("session", c.name, p.name, {"metadata": env}), env.notation)
    for p in parties:
        body = _open_ids(net.receive(p.name, "session")["metadata"], p.keys.private())
        p.session_id = body["session"]
        p._audit_positions = np.asarray(body["audit"], dtype=np.int64)
        p.key_bits = p._measured[np.asarray(body["key"], dtype=np.int64)]
        checked = bits_to_string(p._measured[np.asarray(body["check"], dtype=np.int64)])
        s._send(4, Message("check-bits", p.name, c.name, {"bits": checked}), "clear")

    if len(rest) < KEY_BITS or len(check) == 0 or len(audit) == 0:
        for p in parties:
            net.receive(c.name, "check-bits")
        round_.outcome = "insufficient-key"
        raise KeyEstablishmentAborted("too few common positions for a key")
    aborted = []
    for p in parties:
        msg = net.receive(c.name, "check-bits")
        theirs = np.frombuffer(msg["bits"].encode("ascii"), dtype=np.uint8) - ord("0")
        qber = estimate_qber(bits[check], theirs, np.arange(len(check)))
        round_.qber[msg.sender] = qber
        if qber > c.qber_threshold:
            aborted.append(msg.sender)
    if aborted:
        round_.outcome = "leg-abort:" + ",".join(aborted)
        for p in parties:
            p.session_key = None
        raise KeyEstablishmentAborted(f"QBER over threshold on {aborted}")

    key_positions = rest[:KEY_BITS]
    active = ActiveSession(session_id, s.pair, bits[key_positions], key_positions, check, audit, bits)
    c.sessions[session_id] = active
    for p in parties:
        p.session_key = derive_symmetric_key(p.key_bits)
    net.internal(c.name, "session-key-ready", session_id.encode(), s.session_label)
    return active


def step5_send(s: HybridSession, payload: bytes) -> Message:
    a, b, c, net = s.alice, s.bob, s.center, s.net
    if a.session_key is None or a.session_id is None:
        raise MissingSessionKey("step 5 needs an established session key")
    s.transcript.payload_bits = bytes_to_bits(payload)
    rng_a = net.rng(a.name)
    inner = seal(Scheme.SYMMETRIC, payload, a.session_key, rng_a, key_id=a.session_id)
    body = json.dumps({"inner": inner.to_bytes().hex(), "to": b.name}, sort_keys=True).encode()
    outer = seal(Scheme.PRIVATE_KEY, body, a.keys.private(), rng_a)
    msg = s._send(5, Message("message", a.name, b.name, {"message": outer}), f"{outer.notation}(E_SK(Message) || ID_{b.name})")
    audit = bits_to_string(a._measured[a._audit_positions])
    s._send(5, Message("audit-bits", a.name, c.name, {"bits": audit}), "clear")
    return msg


def step6_receive(s: HybridSession) -> bytes | None:
    """Bob opens the message and forwards his audit bits; None means the tag failed."""
    a, b, c, net = s.alice, s.bob, s.center, s.net
    msg = net.receive(b.name, "message")
    payload = None
    try:
        body = json.loads(open_envelope(msg["message"], a.public_key))
        if body.get("to") != b.name:
            raise TagMismatch("message not addressed to this party")
        if b.session_key is None:
            raise MissingSessionKey("bob has no session key")
        payload = open_envelope(Envelope.from_bytes(bytes.fromhex(body["inner"])), b.session_key)
    except (CryptoError, MissingSessionKey, ValueError):
        net.internal(b.name, "decrypt-failed", b"", s.session_label)
    b.received = payload
    audit = bits_to_string(b._measured[b._audit_positions])
    s._send(
        6,
        Message("audit-bits", b.name, c.name, {"bits": audit, "decrypted": payload is not None}),
        "clear",
    )
    return payload


def step7_audit(s: HybridSession) -> bool:
    c, net = s.center, s.net
    active = c.active_for(s.pair)
    if active is None:
        raise ProtocolOrderError("no active session to audit")
    expected = active.center_bits[active.audit_positions]
    ok = True
    round_ = s.transcript.rounds[-1]
    for _ in range(2):
        msg = net.receive(c.name, "audit-bits")
        theirs = np.frombuffer(msg["bits"].encode("ascii"), dtype=np.uint8) - ord("0")
        qber = estimate_qber(expected, theirs, np.arange(len(expected)))
        round_.qber[f"audit:{msg.sender}"] = qber
        if qber > c.qber_threshold or msg.fields.get("decrypted") is False:
            ok = False
    verdict = "ok" if ok else "intruder"
    for p in (s.alice, s.bob):
        s._send(7, Message("audit-result", c.name, p.name, {"result": verdict, "session": active.session_id}), "clear")
        net.receive(p.name, "audit-result")
    if not ok:
        c.discard(s.pair)
        for p in (s.alice, s.bob):
            p.session_key = None
        round_.outcome = "audit-failed"
    else:
        round_.outcome = "delivered"
    return ok


def run_hybrid(
    s: HybridSession,
    payload: bytes,
    retry_cap: int = DEFAULT_RETRY_CAP,
    accept: bool = True,
) -> HybridTranscript:
    """Run steps 1 to 7, rekeying until delivery or ``retry_cap`` rekeys have failed."""
    t = s.transcript
    rekeys = 0
    try:
        step1_initiate(s)
        step2_notify(s)
        step3_accept(s, accept=accept)
        while True:
            try:
                step4_distribute(s)
                step5_send(s, payload)
                step6_receive(s)
                delivered = step7_audit(s)
            except KeyEstablishmentAborted:
                s.center.rekey_counter += 1
                delivered = False
            if delivered:
                t.delivered_payload = s.bob.received
                t.session_key = s.alice.session_key
                t.session_key_bits = bits_to_string(s.alice.key_bits)
                t.verdict = HybridVerdict("Delivered" if rekeys == 0 else "RekeyedThenDelivered", rekeys)
                break
            rekeys += 1
            if rekeys > retry_cap:
                raise ExchangeFailed(FailureReason.RETRIES_EXHAUSTED, f"{rekeys - 1} rekeys")
    except ExchangeFailed as exc:
        t.verdict = HybridVerdict("Failed", min(rekeys, retry_cap), exc.reason)
    s.net.internal(s.center.name, f"verdict:{t.verdict}", b"", s.session_label)
    return t
