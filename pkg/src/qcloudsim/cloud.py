"""Kerberos-style KDC whose service session keys come from quantum base comparison.

Handshake per (client, service) session::

    AS   client -> kdc      AS_REQ   name, requested lifetime, E_PASSWORD(timestamp)
         kdc -> client      AS_REP   E_PASSWORD(S_A,KDC || expiry), TGT = E_K_KDC(...)
    TGS  client -> kdc      TGS_REQ  TGT, E_S_A,KDC(authenticator), service
         kdc -> client      TGS_REP  E_S_A,KDC(S_A,B || expiry), ticket = E_K_B(...)
    CS   client -> service  CS_REQ   ticket, E_S_A,B(authenticator)
         service -> client  CS_REP   E_S_A,B(timestamp)
    QKD  service -> kdc     E_K_B(QB_CSP)
         client -> kdc      TGT, E_PASSWORD(QB_CLIENT)
         kdc                sift QB_CLIENT against QB_CSP, write SessionRecord
         kdc -> client      photons (key bits in QB_CSP), E_PASSWORD(QB_CSP)
         client -> service  E_SESSION-KEY(FILE) || ID_CLIENT

Tickets are valid on the half-open interval ``[issued, expiry)``.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .crypto import (
    KEY_BITS,
    CryptoError,
    Envelope,
    Scheme,
    SymmetricKey,
    TagMismatch,
    derive_symmetric_key,
    open_envelope,
    password_key,
    random_symmetric_key,
    seal,
)
from .netsim.core import ChannelKind, Message, Network
from .photonics import PhotonTrain, bases_to_string

AUTHENTICATOR_WINDOW = 300
TICKET_LIFETIME = 3600
DEFAULT_BASE_LENGTH = 2048
DEFAULT_RETRY_CAP = 5


class CloudError(Exception):
    pass


class UnknownPrincipal(CloudError):
    pass


class AuthFailed(CloudError):
    pass


class Expired(CloudError):
    pass


class Skew(CloudError):
    pass


class ChecksumFailed(CloudError):
    pass


class ReplayDetected(CloudError):
    pass


class InsufficientAgreement(CloudError):
    pass


class NoSession(CloudError):
    pass


class IntrusionSuspected(CloudError):
    pass


class WriteDenied(CloudError):
    pass


class PrincipalKind(str, enum.Enum):
    CLOUD_CUSTOMER = "CloudCustomer"
    CLOUD_SERVICE = "CloudService"
    KDC = "Kdc"


@dataclass(frozen=True)
class Principal:
    kind: PrincipalKind
    name: str
    key: SymmetricKey = field(repr=False)


def customer(name: str, password: str) -> Principal:
    return Principal(PrincipalKind.CLOUD_CUSTOMER, name, password_key(password))


def service(name: str, rng: np.random.Generator) -> Principal:
    return Principal(PrincipalKind.CLOUD_SERVICE, name, random_symmetric_key(rng))


def _pack(**fields) -> bytes:
    return json.dumps(fields, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _unpack(envelope: Envelope, key: SymmetricKey, error=AuthFailed) -> dict:
    try:
        return json.loads(open_envelope(envelope, key))
    except CryptoError as exc:
        raise error(str(exc)) from exc


def _key_hex(key: SymmetricKey) -> str:
    return key.key.hex()


def _key_from_hex(text: str) -> SymmetricKey:
    return SymmetricKey(bytes.fromhex(text))


def checksum(client: str, target: str, timestamp: int) -> str:
    return hashlib.sha256(f"{client}|{target}|{timestamp}".encode()).hexdigest()[:16]


def ticket_valid(issued: int, expiry: int, now: int) -> bool:
    return issued <= now < expiry


@dataclass(frozen=True)
class Tgt:
    customer: str
    session_key: SymmetricKey = field(repr=False)
    issued: int
    expiry: int

    def seal(self, kdc_key: SymmetricKey, rng: np.random.Generator, kdc_name: str) -> Envelope:
        body = _pack(customer=self.customer, key=_key_hex(self.session_key), issued=self.issued, expiry=self.expiry)
        return seal(Scheme.SYMMETRIC, body, kdc_key, rng, key_id=kdc_name)

    @classmethod
    def open(cls, envelope: Envelope, kdc_key: SymmetricKey) -> "Tgt":
        d = _unpack(envelope, kdc_key)
        return cls(d["customer"], _key_from_hex(d["key"]), d["issued"], d["expiry"])


@dataclass(frozen=True)
class ServiceTicket:
    customer: str
    service: str
    session_key: SymmetricKey = field(repr=False)
    issued: int
    expiry: int

    def seal(self, service_key: SymmetricKey, rng: np.random.Generator) -> Envelope:
        body = _pack(
            customer=self.customer,
            service=self.service,
            key=_key_hex(self.session_key),
            issued=self.issued,
            expiry=self.expiry,
        )
        return seal(Scheme.SYMMETRIC, body, service_key, rng, key_id=self.service)

    @classmethod
    def open(cls, envelope: Envelope, service_key: SymmetricKey) -> "ServiceTicket":
        d = _unpack(envelope, service_key)
        return cls(d["customer"], d["service"], _key_from_hex(d["key"]), d["issued"], d["expiry"])


class SessionStatus(str, enum.Enum):
    ACTIVE = "Active"
    INVALIDATED = "Invalidated"


@dataclass
class SessionRecord:
    session_id: str
    client: str
    service: str
    session_key: SymmetricKey = field(repr=False)
    created_at: int
    status: SessionStatus = SessionStatus.ACTIVE


class SessionDatabase:
    """Global store shared by the KDC (sole writer) and services (readers)."""

    def __init__(self, net: Network, writer: str):
        self._net = net
        self._writer = writer
        self._records: dict[tuple[str, str], SessionRecord] = {}
        self.history: list[SessionRecord] = []

    def _check_writer(self, actor: str, action: str) -> None:
        if actor != self._writer:
            raise WriteDenied(f"{actor} may not {action} the session database")

    def write(self, actor: str, record: SessionRecord) -> None:
        self._check_writer(actor, "write")
        self._records[(record.client, record.service)] = record
        self.history.append(record)
        self._net.internal(actor, "db:write", record.session_id.encode(), record.session_id)

    def invalidate(self, actor: str, client: str, service: str) -> None:
        self._check_writer(actor, "invalidate")
        record = self._records.get((client, service))
        if record is None:
            return
        record.status = SessionStatus.INVALIDATED
        self._net.internal(actor, "db:invalidate", record.session_id.encode(), record.session_id)

    def lookup(self, client: str, service: str) -> SessionRecord:
        record = self._records.get((client, service))
        if record is None or record.status is not SessionStatus.ACTIVE:
            raise NoSession(f"no active session for {client} at {service}")
        return record


@dataclass(frozen=True)
class QuantumBaseSequence:
    owner: str
    bases: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.bases)


@dataclass
class Kdc:
    net: Network
    name: str = "kdc"
    lifetime: int = TICKET_LIFETIME
    window: int = AUTHENTICATOR_WINDOW
    principals: dict[str, Principal] = field(default_factory=dict)
    csp_bases: dict[str, QuantumBaseSequence] = field(default_factory=dict)
    pending: dict[tuple[str, str], QuantumBaseSequence] = field(default_factory=dict)
    key_bits: dict[tuple[str, str], np.ndarray] = field(default_factory=dict, repr=False)
    db: SessionDatabase | None = None
    _master: SymmetricKey | None = field(default=None, repr=False)
    _seq: int = 0

    def __post_init__(self) -> None:
        self._master = random_symmetric_key(self.net.rng(self.name))
        self.db = SessionDatabase(self.net, self.name)

    def register(self, principal: Principal) -> None:
        if principal.name in self.principals or principal.name == self.name:
            raise ValueError(f"duplicate principal {principal.name!r}")
        self.principals[principal.name] = principal

    def principal(self, name: str, kind: PrincipalKind) -> Principal:
        p = self.principals.get(name)
        if p is None or p.kind is not kind:
            raise UnknownPrincipal(name)
        return p

    def check_tgt(self, envelope: Envelope) -> Tgt:
        tgt = Tgt.open(envelope, self._master)
        if not ticket_valid(tgt.issued, tgt.expiry, self.net.now):
            raise Expired(f"TGT for {tgt.customer} expired at {tgt.expiry}")
        return tgt


@dataclass
class ServiceEndpoint:
    """A cloud service: its long-term key and an authenticator replay cache."""

    principal: Principal
    window: int = AUTHENTICATOR_WINDOW
    replay_cache: set[tuple[str, int, str]] = field(default_factory=set)
    received: list[tuple[str, bytes]] = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.principal.name


@dataclass
class Client:
    principal: Principal
    tgt: Envelope | None = None
    tgs_key: SymmetricKey | None = field(default=None, repr=False)
    tickets: dict[str, tuple[Envelope, SymmetricKey]] = field(default_factory=dict, repr=False)
    qb: dict[str, QuantumBaseSequence] = field(default_factory=dict, repr=False)
    session_keys: dict[str, SymmetricKey] = field(default_factory=dict, repr=False)
    session_bits: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    _measured: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    password_entries: int = 0

    @property
    def name(self) -> str:
        return self.principal.name


def _check_authenticator(auth: dict, client: str, target: str, now: int, window: int) -> None:
    if auth.get("client") != client:
        raise AuthFailed("authenticator names a different client")
    if auth.get("checksum") != checksum(client, target, auth.get("timestamp", -1)):
        raise ChecksumFailed("authenticator checksum does not verify")
    if abs(now - auth["timestamp"]) > window:
        raise Skew(f"authenticator timestamp {auth['timestamp']} outside window at {now}")


def as_request(net: Network, client: Client, kdc: Kdc, lifetime: int | None = None) -> Message:
    c = client.principal
    client.password_entries += 1
    stamp = net.now
    proof = seal(Scheme.PASSWORD, _pack(timestamp=stamp), c.key, net.rng(c.name), key_id=c.name)
    fields = {"client": c.name, "service": "tgs", "lifetime": lifetime or kdc.lifetime, "timestamp": stamp, "proof": proof}
    return Message("AS_REQ", c.name, kdc.name, fields)


def as_exchange(net: Network, client: Client, kdc: Kdc, request: Message | None = None) -> Tgt:
    """AS_REQ / AS_REP; on success the client holds S_A,KDC and the opaque TGT."""
    request = request or as_request(net, client, kdc)
    net.send(request, session=client.name)
    msg = net.receive(kdc.name, "AS_REQ")
    name = msg["client"]
    principal = kdc.principal(name, PrincipalKind.CLOUD_CUSTOMER)
    proof = _unpack(msg["proof"], principal.key)
    if proof.get("timestamp") != msg["timestamp"]:
        raise AuthFailed("timestamp proof does not match request")
    if abs(net.now - msg["timestamp"]) > kdc.window:
        raise Skew(f"AS_REQ timestamp {msg['timestamp']} outside window at {net.now}")
    rng = net.rng(kdc.name)
    tgt = Tgt(name, random_symmetric_key(rng), net.now, net.now + int(msg["lifetime"]))
    part = seal(Scheme.PASSWORD, _pack(key=_key_hex(tgt.session_key), expiry=tgt.expiry), principal.key, rng, key_id=name)
    net.send(Message("AS_REP", kdc.name, name, {"part": part, "tgt": tgt.seal(kdc._master, rng, kdc.name)}), session=name)

    reply = net.receive(client.name, "AS_REP")
    mine = _unpack(reply["part"], client.principal.key)
    client.tgs_key = _key_from_hex(mine["key"])
    client.tgt = reply["tgt"]
    return tgt


def _authenticator(net: Network, client: Client, target: str, key: SymmetricKey, stamp: int | None = None) -> Envelope:
    stamp = net.now if stamp is None else stamp
    body = _pack(client=client.name, timestamp=stamp, checksum=checksum(client.name, target, stamp))
    return seal(Scheme.SYMMETRIC, body, key, net.rng(client.name), key_id=client.name)


def tgs_request(net: Network, client: Client, kdc: Kdc, service_name: str, stamp: int | None = None) -> Message:
    if client.tgt is None:
        raise AuthFailed("client holds no TGT")
    auth = _authenticator(net, client, service_name, client.tgs_key, stamp)
    fields = {"tgt": client.tgt, "authenticator": auth, "service": service_name}
    return Message("TGS_REQ", client.name, kdc.name, fields)


def tgs_exchange(
    net: Network, client: Client, kdc: Kdc, service_name: str, request: Message | None = None
) -> ServiceTicket:
    request = request or tgs_request(net, client, kdc, service_name)
    net.send(request, session=client.name)
    msg = net.receive(kdc.name, "TGS_REQ")
    tgt = kdc.check_tgt(msg["tgt"])
    auth = _unpack(msg["authenticator"], tgt.session_key)
    _check_authenticator(auth, tgt.customer, msg["service"], net.now, kdc.window)
    svc = kdc.principal(msg["service"], PrincipalKind.CLOUD_SERVICE)
    rng = net.rng(kdc.name)
    expiry = min(net.now + kdc.lifetime, tgt.expiry)
    ticket = ServiceTicket(tgt.customer, svc.name, random_symmetric_key(rng), net.now, expiry)
    part = seal(
        Scheme.SYMMETRIC,
        _pack(key=_key_hex(ticket.session_key), service=svc.name, expiry=expiry),
        tgt.session_key,
        rng,
        key_id=tgt.customer,
    )
    net.send(Message("TGS_REP", kdc.name, tgt.customer, {"part": part, "ticket": ticket.seal(svc.key, rng)}), session=tgt.customer)

    reply = net.receive(client.name, "TGS_REP")
    mine = _unpack(reply["part"], client.tgs_key)
    client.tickets[mine["service"]] = (reply["ticket"], _key_from_hex(mine["key"]))
    return ticket


def cs_request(net: Network, client: Client, service_name: str, stamp: int | None = None) -> Message:
    if service_name not in client.tickets:
        raise AuthFailed(f"client holds no ticket for {service_name}")
    ticket, key = client.tickets[service_name]
    auth = _authenticator(net, client, service_name, key, stamp)
    return Message("CS_REQ", client.name, service_name, {"ticket": ticket, "authenticator": auth})


def cs_exchange(net: Network, client: Client, endpoint: ServiceEndpoint, request: Message | None = None) -> int:
    """CS_REQ / CS_REP; returns the timestamp echoed by the service."""
    request = request or cs_request(net, client, endpoint.name)
    net.send(request, session=client.name)
    msg = net.receive(endpoint.name, "CS_REQ")
    ticket = ServiceTicket.open(msg["ticket"], endpoint.principal.key)
    if ticket.service != endpoint.name or not ticket_valid(ticket.issued, ticket.expiry, net.now):
        raise Expired(f"service ticket for {ticket.customer} not valid at {net.now}")
    auth = _unpack(msg["authenticator"], ticket.session_key)
    _check_authenticator(auth, ticket.customer, endpoint.name, net.now, endpoint.window)
    cache_key = (auth["client"], auth["timestamp"], auth["checksum"])
    if cache_key in endpoint.replay_cache:
        raise ReplayDetected(f"authenticator {cache_key} already seen")
    endpoint.replay_cache.add(cache_key)
    reply = seal(
        Scheme.SYMMETRIC, _pack(timestamp=auth["timestamp"]), ticket.session_key, net.rng(endpoint.name), key_id=endpoint.name
    )
    net.send(Message("CS_REP", endpoint.name, ticket.customer, {"reply": reply}), session=ticket.customer)

    answer = net.receive(client.name, "CS_REP")
    _, key = client.tickets[endpoint.name]
    return _unpack(answer["reply"], key)["timestamp"]


# -- QKD-derived session keys ----------------------------------------------------

def _bases_from_string(text: str) -> np.ndarray:
    return (np.frombuffer(text.encode("ascii"), dtype=np.uint8) == ord("x")).astype(np.uint8)


def csp_register_bases(net: Network, endpoint: ServiceEndpoint, kdc: Kdc, n: int = DEFAULT_BASE_LENGTH) -> QuantumBaseSequence:
    """The service draws fresh bases and shares them with the KDC; older ones are dropped."""
    rng = net.rng(endpoint.name)
    bases = rng.integers(0, 2, size=n, dtype=np.uint8)
    env = seal(Scheme.SYMMETRIC, bases_to_string(bases).encode(), endpoint.principal.key, rng, key_id=endpoint.name)
    net.send(Message("QB_CSP", endpoint.name, kdc.name, {"bases": env}), session=endpoint.name)
    msg = net.receive(kdc.name, "QB_CSP")
    svc = kdc.principal(msg.sender, PrincipalKind.CLOUD_SERVICE)
    text = open_envelope(msg["bases"], svc.key).decode("ascii")
    seq = QuantumBaseSequence(svc.name, _bases_from_string(text))
    kdc.csp_bases[svc.name] = seq
    return seq


def client_request_access(net: Network, client: Client, kdc: Kdc, service_name: str) -> QuantumBaseSequence:
    """Send the TGT and E_PASSWORD(QB_CLIENT); a repeat request replaces the pending one."""
    if client.tgt is None:
        raise AuthFailed("client holds no TGT")
    n = len(kdc.csp_bases[service_name]) if service_name in kdc.csp_bases else DEFAULT_BASE_LENGTH
    rng = net.rng(client.name)
    bases = rng.integers(0, 2, size=n, dtype=np.uint8)
    client.qb[service_name] = QuantumBaseSequence(client.name, bases)
    env = seal(
        Scheme.PASSWORD,
        _pack(service=service_name, bases=bases_to_string(bases)),
        client.principal.key,
        rng,
        key_id=client.name,
    )
    net.send(Message("ACCESS_REQ", client.name, kdc.name, {"tgt": client.tgt, "request": env}), session=client.name)
    msg = net.receive(kdc.name, "ACCESS_REQ")
    tgt = kdc.check_tgt(msg["tgt"])
    principal = kdc.principal(tgt.customer, PrincipalKind.CLOUD_CUSTOMER)
    body = _unpack(msg["request"], principal.key)
    seq = QuantumBaseSequence(tgt.customer, _bases_from_string(body["bases"]))
    kdc.pending[(tgt.customer, body["service"])] = seq
    return seq


def matching_positions(qb_client: np.ndarray, qb_csp: np.ndarray) -> np.ndarray:
    qb_client = np.asarray(qb_client)
    qb_csp = np.asarray(qb_csp)
    if qb_client.shape != qb_csp.shape:
        raise ValueError("base sequences differ in length")
    return np.flatnonzero(qb_client == qb_csp)


def session_key_bits(qb_client, qb_csp, key_bits) -> np.ndarray:
    """Key bits at positions where the two base sequences agree, truncated to 128."""
    keep = matching_positions(qb_client, qb_csp)
    if len(keep) < KEY_BITS:
        raise InsufficientAgreement(f"only {len(keep)} matching bases, need {KEY_BITS}")
    return np.asarray(key_bits, dtype=np.uint8)[keep[:KEY_BITS]]


def kdc_generate_session_key(net: Network, kdc: Kdc, client_name: str, service_name: str) -> SessionRecord:
    qb_client = kdc.pending[(client_name, service_name)]
    qb_csp = kdc.csp_bases[service_name]
    if len(qb_client) != len(qb_csp):
        raise InsufficientAgreement("base sequences differ in length")
    key_bits = net.rng(kdc.name).integers(0, 2, size=len(qb_csp), dtype=np.uint8)
    bits = session_key_bits(qb_client.bases, qb_csp.bases, key_bits)
    kdc._seq += 1
    record = SessionRecord(
        f"{client_name}@{service_name}#{kdc._seq}", client_name, service_name, derive_symmetric_key(bits), net.now
    )
    kdc.key_bits[(client_name, service_name)] = key_bits
    kdc.db.write(kdc.name, record)
    return record


def kdc_send_csp_bases(net: Network, kdc: Kdc, client: Client, service_name: str) -> SymmetricKey | None:
    """Photons carry the key bits in QB_CSP; the client measures in its own bases and sifts.

    Returns the client-side key, or None when too few positions agree
    (which cannot happen once the KDC has accepted the same sequences).
    """
    qb_csp = kdc.csp_bases[service_name]
    key_bits = kdc.key_bits.pop((client.name, service_name))
    session = f"{client.name}@{service_name}"
    net.transmit_photons(kdc.name, client.name, PhotonTrain(key_bits, qb_csp.bases), session)
    principal = kdc.principal(client.name, PrincipalKind.CLOUD_CUSTOMER)
    env = seal(
        Scheme.PASSWORD,
        _pack(service=service_name, bases=bases_to_string(qb_csp.bases)),
        principal.key,
        net.rng(kdc.name),
        key_id=client.name,
    )
    net.send(Message("QB_CSP_TO_CLIENT", kdc.name, client.name, {"bases": env}), session=session)

    mine = client.qb[service_name].bases
    measured = net.receive_photons(client.name, mine, session)
    body = _unpack(net.receive(client.name, "QB_CSP_TO_CLIENT")["bases"], client.principal.key)
    try:
        bits = session_key_bits(mine, _bases_from_string(body["bases"]), measured)
    except InsufficientAgreement:
        return None
    client.session_bits[service_name] = bits
    client.session_keys[service_name] = derive_symmetric_key(bits)
    return client.session_keys[service_name]


def client_send_file(net: Network, client: Client, endpoint: ServiceEndpoint, kdc: Kdc, payload: bytes) -> bytes:
    """E_SESSION-KEY(FILE) || ID_CLIENT; the service finds the key by client id."""
    key = client.session_keys.get(endpoint.name)
    if key is None:
        raise NoSession(f"{client.name} has no session key for {endpoint.name}")
    env = seal(Scheme.SYMMETRIC, payload, key, net.rng(client.name), key_id=client.name)
    net.send(Message("FILE", client.name, endpoint.name, {"file": env, "client": client.name}), session=client.name)
    msg = net.receive(endpoint.name, "FILE")
    record = kdc.db.lookup(msg["client"], endpoint.name)
    try:
        data = open_envelope(msg["file"], record.session_key)
    except TagMismatch as exc:
        raise IntrusionSuspected(f"file from {msg['client']} failed authentication") from exc
    endpoint.received.append((msg["client"], data))
    return data


def handle_intrusion(net: Network, kdc: Kdc, endpoint: ServiceEndpoint, client: Client, n: int) -> None:
    kdc.db.invalidate(kdc.name, client.name, endpoint.name)
    client.session_keys.pop(endpoint.name, None)
    client.session_bits.pop(endpoint.name, None)
    net.internal(kdc.name, "intrusion", f"{client.name}@{endpoint.name}".encode(), client.name)
    csp_register_bases(net, endpoint, kdc, n)


# -- scenario driver --------------------------------------------------------------

@dataclass
class SessionOutcome:
    client: str
    service: str
    verdict: str
    restarts: int
    handshake_messages: int
    session_key: SymmetricKey | None = field(default=None, repr=False)
    session_bits: np.ndarray | None = field(default=None, repr=False)

    @property
    def delivered(self) -> bool:
        return self.verdict == "Delivered"


@dataclass
class CloudResult:
    sessions: list[SessionOutcome]
    password_entries: dict[str, int]
    kdc: Kdc

    def summary(self) -> dict[str, float]:
        n = len(self.sessions)
        return {
            "sessions": n,
            "delivered": sum(s.delivered for s in self.sessions),
            "rekeys": sum(s.restarts for s in self.sessions),
            "failed": sum(not s.delivered for s in self.sessions),
            "mean_handshake_msgs": (sum(s.handshake_messages for s in self.sessions) / n) if n else 0.0,
        }


def establish_and_send(
    net: Network,
    kdc: Kdc,
    client: Client,
    endpoint: ServiceEndpoint,
    payload: bytes,
    n: int = DEFAULT_BASE_LENGTH,
    retry_cap: int = DEFAULT_RETRY_CAP,
) -> SessionOutcome:
    """Ticket handshake, then QKD key setup and file delivery with restarts on intrusion."""
    start = net.message_count
    tgs_exchange(net, client, kdc, endpoint.name)
    cs_exchange(net, client, endpoint)
    if endpoint.name not in kdc.csp_bases or len(kdc.csp_bases[endpoint.name]) != n:
        csp_register_bases(net, endpoint, kdc, n)
    restarts = 0
    while True:
        client_request_access(net, client, kdc, endpoint.name)
        try:
            kdc_generate_session_key(net, kdc, client.name, endpoint.name)
            kdc_send_csp_bases(net, kdc, client, endpoint.name)
            data = client_send_file(net, client, endpoint, kdc, payload)
            if data != payload:
                raise IntrusionSuspected("delivered bytes differ")
            return SessionOutcome(
                client.name,
                endpoint.name,
                "Delivered",
                restarts,
                net.message_count - start,
                client.session_keys[endpoint.name],
                client.session_bits[endpoint.name],
            )
        except (IntrusionSuspected, InsufficientAgreement, NoSession):
            if restarts >= retry_cap:
                handle_intrusion_final(net, kdc, endpoint, client)
                return SessionOutcome(client.name, endpoint.name, "Failed", restarts, net.message_count - start)
            restarts += 1
            handle_intrusion(net, kdc, endpoint, client, n)


def handle_intrusion_final(net: Network, kdc: Kdc, endpoint: ServiceEndpoint, client: Client) -> None:
    kdc.db.invalidate(kdc.name, client.name, endpoint.name)
    client.session_keys.pop(endpoint.name, None)
    net.internal(kdc.name, "failed", f"{client.name}@{endpoint.name}".encode(), client.name)


def run_cloud(
    net: Network,
    clients: int = 1,
    services: int = 2,
    n: int = DEFAULT_BASE_LENGTH,
    retry_cap: int = DEFAULT_RETRY_CAP,
    lifetime: int = TICKET_LIFETIME,
    payload: bytes = b"customer file",
) -> CloudResult:
    """Every client logs in once and then opens a session with every service."""
    kdc = Kdc(net, lifetime=lifetime)
    endpoints = []
    for j in range(services):
        p = service(f"svc{j}", net.rng(f"setup:svc{j}"))
        kdc.register(p)
        endpoints.append(ServiceEndpoint(p))
    people = []
    for i in range(clients):
        p = customer(f"client{i}", f"password-{i}")
        kdc.register(p)
        people.append(Client(p))
    outcomes = []
    for person in people:
        as_exchange(net, person, kdc)
        for endpoint in endpoints:
            outcomes.append(establish_and_send(net, kdc, person, endpoint, payload, n, retry_cap))
    return CloudResult(outcomes, {p.name: p.password_entries for p in people}, kdc)
