"""Simulation plumbing shared by every protocol: clock, RNG streams, channels, trace.

RNG streams: each actor's generator is ``numpy.random.Generator(PCG64(s))``
with ``s`` the first 8 bytes (big-endian) of ``SHA-256(f"{seed}/{actor}")``.
Streams depend only on the master seed and the actor name, never on
creation order.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from ..crypto import CryptoError, Envelope, SymmetricKey, bytes_to_bits, open_envelope, tamper
from ..photonics import (
    Eavesdropper,
    PhotonTrain,
    QuantumChannel,
    TransmissionReport,
    bits_to_string,
    transmit_train,
)

SLOT_SECONDS = 60


def derive_stream_seed(seed: int, actor: str) -> int:
    digest = hashlib.sha256(f"{seed}/{actor}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def stream(seed: int, actor: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_stream_seed(seed, actor)))


class ChannelKind(str, enum.Enum):
    CLASSICAL = "Classical"
    QUANTUM = "Quantum"
    INTERNAL = "Internal"


@dataclass(frozen=True)
class TraceRecord:
    sim_time: int
    actor: str
    action: str
    channel: ChannelKind
    digest: str
    session: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "sim_time": self.sim_time,
                "actor": self.actor,
                "action": self.action,
                "channel": self.channel.value,
                "digest": self.digest,
                "session": self.session,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "TraceRecord":
        d = json.loads(line)
        return cls(d["sim_time"], d["actor"], d["action"], ChannelKind(d["channel"]), d["digest"], d["session"])


def trace_digest(records: Iterable[TraceRecord]) -> str:
    h = hashlib.sha256()
    for r in records:
        h.update(r.to_json().encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def payload_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def _canonical(value: Any) -> Any:
    if isinstance(value, Envelope):
        return {"envelope": value.to_bytes().hex()}
    if isinstance(value, (bytes, bytearray)):
        return {"bytes": bytes(value).hex()}
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, (np.integer,)):
        return int(value)
    return value


@dataclass
class Message:
    """A classical message. Plain fields travel in the clear; Envelope fields are sealed."""

    kind: str
    sender: str
    receiver: str
    fields: dict[str, Any]

    def to_bytes(self) -> bytes:
        body = {
            "kind": self.kind,
            "sender": self.sender,
            "receiver": self.receiver,
            "fields": {k: _canonical(v) for k, v in sorted(self.fields.items())},
        }
        return json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")

    def __getitem__(self, name: str) -> Any:
        return self.fields[name]


class AdversaryKnowledge:
    """Append-only record of what an adversary saw or managed to decrypt."""

    def __init__(self) -> None:
        self._bit_strings: list[str] = []
        self._plaintexts: list[str] = []
        self._payloads: list[bytes] = []
        self._digests: list[str] = []

    @property
    def bit_strings(self) -> tuple[str, ...]:
        return tuple(self._bit_strings)

    @property
    def plaintexts(self) -> tuple[str, ...]:
        return tuple(self._plaintexts)

    @property
    def payloads(self) -> tuple[bytes, ...]:
        return tuple(self._payloads)

    @property
    def digests(self) -> tuple[str, ...]:
        return tuple(self._digests)

    def observe_bits(self, bits: str) -> None:
        self._bit_strings.append(bits)

    def observe_plaintext(self, text: str) -> None:
        self._plaintexts.append(text)

    def observe_payload(self, payload: bytes) -> None:
        self._payloads.append(payload)

    def observe_digest(self, digest: str) -> None:
        self._digests.append(digest)

    def __len__(self) -> int:
        return len(self._bit_strings) + len(self._plaintexts) + len(self._payloads) + len(self._digests)


def _as_bit_string(key) -> tuple[str, bytes | None]:
    if isinstance(key, SymmetricKey):
        return bytes_to_bits(key.key), key.key
    if isinstance(key, (bytes, bytearray)):
        return bytes_to_bits(bytes(key)), bytes(key)
    if isinstance(key, str):
        return key, None
    return bits_to_string(np.asarray(key)), None


def knowledge_contains_key(knowledge: AdversaryKnowledge, accepted_key) -> bool:
    """True if the key appears anywhere in what the adversary observed."""
    if accepted_key is None:
        return False
    bits, raw = _as_bit_string(accepted_key)
    if not bits:
        return False
    if any(bits in s for s in knowledge.bit_strings):
        return True
    if any(bits in s for s in knowledge.plaintexts):
        return True
    if raw is not None and any(raw in p for p in knowledge.payloads):
        return True
    return any(bits in bytes_to_bits(p) for p in knowledge.payloads)


@dataclass
class InterceptionSchedule:
    """Half-open sim-time intervals ``[start, end)`` with an interception probability."""

    intervals: list[tuple[float, float, float]] = field(default_factory=list)

    def __post_init__(self) -> None:
        ordered = sorted(self.intervals)
        for start, end, p in ordered:
            if not start < end:
                raise ValueError(f"empty interval [{start}, {end})")
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"interception probability {p} outside [0, 1]")
        for (_, end_a, _), (start_b, _, _) in zip(ordered, ordered[1:]):
            if start_b < end_a:
                raise ValueError("interception intervals overlap")
        self.intervals = [(float(s), float(e), float(p)) for s, e, p in ordered]

    @classmethod
    def constant(cls, probability: float) -> "InterceptionSchedule":
        if probability == 0:
            return cls([])
        return cls([(0.0, math.inf, probability)])

    @classmethod
    def first_rounds(cls, rounds: int, probability: float = 1.0) -> "InterceptionSchedule":
        """Attack the opening slot plus the first ``rounds`` key-establishment slots."""
        if rounds <= 0 or probability == 0:
            return cls([])
        return cls([(0.0, float((rounds + 1) * SLOT_SECONDS), probability)])

    def probability_at(self, t: float) -> float:
        for start, end, p in self.intervals:
            if start <= t < end:
                return p
        return 0.0

    def to_list(self) -> list[list[float]]:
        return [[s, e, p] for s, e, p in self.intervals]


@dataclass
class Adversary:
    """An active party on both channels.

    Classical traffic is copied passively; photons are intercept-resent
    according to the schedule. ``held_keys`` lets tests hand the adversary
    a key so successful openings can be exercised.
    """

    name: str = "eve"
    eavesdropper: Eavesdropper | None = None
    taps_classical: bool = True
    held_keys: list[Any] = field(default_factory=list)
    tamper_kinds: set[str] = field(default_factory=set)
    # quantum receivers under attack; None attacks every leg
    quantum_targets: set[str] | None = None
    knowledge: AdversaryKnowledge = field(default_factory=AdversaryKnowledge)


def tap_classical(adversary: Adversary, message: Message) -> None:
    k = adversary.knowledge
    for name, value in sorted(message.fields.items()):
        if isinstance(value, Envelope):
            opened = None
            for key in adversary.held_keys:
                try:
                    opened = open_envelope(value, key)
                    break
                except CryptoError:
                    continue
            if opened is None:
                k.observe_digest(payload_digest(value.to_bytes()))
            else:
                k.observe_payload(opened)
            continue
        text = value if isinstance(value, str) else json.dumps(_canonical(value))
        k.observe_plaintext(text)
        if isinstance(value, str) and value and set(value) <= {"0", "1", "?"}:
            k.observe_bits(value)


class Network:
    """Message passing with a virtual clock and an audit trace."""

    def __init__(
        self,
        seed: int,
        adversary: Adversary | None = None,
        schedule: InterceptionSchedule | None = None,
        noise: float = 0.0,
    ) -> None:
        self.seed = seed
        self.now = 0
        self.trace: list[TraceRecord] = []
        self.adversary = adversary
        self.schedule = schedule or InterceptionSchedule()
        self.noise = noise
        self._rngs: dict[str, np.random.Generator] = {}
        self._inbox: dict[tuple[str, ChannelKind], deque] = {}
        self._train_seq = 0
        self.message_count = 0
        if adversary is not None and adversary.eavesdropper is None:
            adversary.eavesdropper = Eavesdropper(self.rng(adversary.name), 0.0, stream_id=adversary.name)

    def rng(self, actor: str) -> np.random.Generator:
        if actor not in self._rngs:
            self._rngs[actor] = stream(self.seed, actor)
        return self._rngs[actor]

    def tick(self, seconds: int = 1) -> int:
        self.now += seconds
        return self.now

    def next_slot(self) -> int:
        """Advance to the next slot boundary strictly after the current time."""
        self.now = (self.now // SLOT_SECONDS + 1) * SLOT_SECONDS
        return self.now

    def record(
        self, actor: str, action: str, channel: ChannelKind, payload: bytes, session: str
    ) -> TraceRecord:
        rec = TraceRecord(self.now, actor, action, channel, payload_digest(payload), session)
        self.trace.append(rec)
        return rec

    # classical channel

    def send(self, message: Message, session: str = "") -> Message:
        self.tick()
        self.message_count += 1
        self.record(message.sender, f"send:{message.kind}", ChannelKind.CLASSICAL, message.to_bytes(), session)
        adv = self.adversary
        if adv is not None and adv.taps_classical:
            tap_classical(adv, message)
            if message.kind in adv.tamper_kinds:
                message = Message(
                    message.kind,
                    message.sender,
                    message.receiver,
                    {k: tamper(v) if isinstance(v, Envelope) else v for k, v in message.fields.items()},
                )
                self.record(adv.name, f"tamper:{message.kind}", ChannelKind.CLASSICAL, message.to_bytes(), session)
        self._inbox.setdefault((message.receiver, ChannelKind.CLASSICAL), deque()).append(message)
        return message

    def receive(self, receiver: str, kind: str | None = None) -> Message:
        box = self._inbox.get((receiver, ChannelKind.CLASSICAL))
        if not box:
            raise LookupError(f"no message waiting for {receiver}")
        message = box.popleft()
        if kind is not None and message.kind != kind:
            raise LookupError(f"{receiver} expected {kind}, got {message.kind}")
        return message

    # quantum channel

    def interception_probability(self) -> float:
        return self.schedule.probability_at(self.now)

    def transmit_photons(
        self, sender: str, receiver: str, train: PhotonTrain, session: str = ""
    ) -> TransmissionReport:
        self.tick()
        self.message_count += 1
        self._train_seq += 1
        n = len(train)
        label = f"{sender}>{receiver}#{self._train_seq}:{n}".encode("utf-8")
        self.record(sender, "transmit", ChannelKind.QUANTUM, label, session)
        eve = self.adversary.eavesdropper if self.adversary is not None else None
        if eve is not None:
            targets = self.adversary.quantum_targets
            attacked = targets is None or receiver in targets
            eve.interception_probability = self.interception_probability() if attacked else 0.0
        channel = QuantumChannel(self.noise, eve)
        delivered, report = transmit_train(channel, train, self.rng(f"channel:{sender}>{receiver}"))
        if report.intercepted:
            self.record(self.adversary.name, "intercept-measure", ChannelKind.QUANTUM, label, session)
            self.record(self.adversary.name, "resend", ChannelKind.QUANTUM, label, session)
            positions, bits, _ = eve.last_observation()
            seen = np.full(n, ord("?"), dtype=np.uint8)
            seen[positions] = bits + ord("0")
            self.adversary.knowledge.observe_bits(seen.tobytes().decode("ascii"))
        self._inbox.setdefault((receiver, ChannelKind.QUANTUM), deque()).append((label, delivered))
        return report

    def receive_photons(
        self, receiver: str, bases: np.ndarray, session: str = ""
    ) -> np.ndarray:
        box = self._inbox.get((receiver, ChannelKind.QUANTUM))
        if not box:
            raise LookupError(f"no photons waiting for {receiver}")
        label, train = box.popleft()
        bits = train.measure(bases, self.rng(receiver))
        self.record(receiver, "measure", ChannelKind.QUANTUM, label, session)
        return bits

    def internal(self, actor: str, action: str, payload: bytes = b"", session: str = "") -> None:
        self.record(actor, action, ChannelKind.INTERNAL, payload, session)

    def trace_digest(self) -> str:
        return trace_digest(self.trace)


# -- trace audits --------------------------------------------------------------

QUANTUM_ACTIONS = {"transmit", "intercept-measure", "resend", "measure"}


def audit_no_cloning(trace: Iterable[TraceRecord]) -> bool:
    """Every quantum payload is either measured or resent after a measurement, never copied."""
    transmitted: dict[tuple[str, str], int] = {}
    intercepted: set[tuple[str, str, str]] = set()
    for r in trace:
        if r.channel is not ChannelKind.QUANTUM:
            continue
        if r.action not in QUANTUM_ACTIONS:
            return False
        key = (r.session, r.digest)
        if r.action == "transmit":
            transmitted[key] = transmitted.get(key, 0) + 1
        elif r.action == "intercept-measure":
            if key not in transmitted:
                return False
            intercepted.add((r.actor,) + key)
        elif r.action == "resend":
            if (r.actor,) + key not in intercepted:
                return False
        elif r.action == "measure":
            if transmitted.get(key, 0) < 1:
                return False
            transmitted[key] -= 1
    return True


def audit_db_writers(trace: Iterable[TraceRecord], kdc_name: str) -> bool:
    return all(r.actor == kdc_name for r in trace if r.action.startswith("db:"))


def audit_monotone_time(trace: Iterable[TraceRecord]) -> bool:
    last = -math.inf
    for r in trace:
        if r.sim_time < last:
            return False
        last = r.sim_time
    return True
