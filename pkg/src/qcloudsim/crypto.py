"""Textbook RSA, a toy tagged stream cipher, and sealed envelopes.

The stream cipher is simulation-grade: a SHA-256 counter-mode keystream with
a truncated HMAC tag. It provides the failure behaviour the protocols need
(wrong keys are detected) and makes no security claim.

Envelope wire layout (all integers big-endian)::

    scheme tag      1 byte   (1 public, 2 private, 3 symmetric, 4 password)
    key id length   2 bytes, then the UTF-8 key id
    nonce           8 bytes
    ciphertext len  4 bytes, then the ciphertext
    tag             8 bytes
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import math
import struct
from dataclasses import dataclass

import numpy as np

KEY_BYTES = 16
KEY_BITS = 8 * KEY_BYTES
NONCE_BYTES = 8
TAG_BYTES = 8
MAX_PRIME = 1 << 32


class CryptoError(Exception):
    pass


class WrongKey(CryptoError):
    """The key does not belong to the envelope's scheme or key id."""


class TagMismatch(CryptoError):
    """Integrity tag did not verify."""


class MalformedEnvelope(CryptoError):
    pass


# -- RSA ---------------------------------------------------------------------

def is_prime_trial(n: int) -> bool:
    if n < 2:
        return False
    if n < 4:
        return True
    if n % 2 == 0:
        return False
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


@dataclass(frozen=True)
class RsaPublicKey:
    owner: str
    modulus: int
    exponent: int


@dataclass(frozen=True)
class RsaPrivateKey:
    owner: str
    modulus: int
    exponent: int


@dataclass(frozen=True)
class RsaKeyPair:
    modulus: int
    public_exponent: int
    private_exponent: int
    p: int
    q: int
    owner: str = ""

    def public(self) -> RsaPublicKey:
        return RsaPublicKey(self.owner, self.modulus, self.public_exponent)

    def private(self) -> RsaPrivateKey:
        return RsaPrivateKey(self.owner, self.modulus, self.private_exponent)


def rsa_keygen(p: int, q: int, e: int, owner: str = "") -> RsaKeyPair:
    for name, v in (("p", p), ("q", q)):
        if v >= MAX_PRIME:
            raise ValueError(f"{name}={v} exceeds the 32-bit prime cap")
        if not is_prime_trial(v):
            raise ValueError(f"{name}={v} is not prime")
    if p == q:
        raise ValueError("p and q must differ")
    phi = (p - 1) * (q - 1)
    if math.gcd(e, phi) != 1 or not 1 < e < phi:
        raise ValueError(f"e={e} is not a valid exponent coprime to {phi}")
    d = pow(e, -1, phi)
    return RsaKeyPair(p * q, e, d, p, q, owner)


def rsa_encrypt(m: int, key: RsaPublicKey | RsaKeyPair) -> int:
    n, e = _modexp_params(key, public=True)
    if not 0 <= m < n:
        raise ValueError(f"message {m} must satisfy 0 <= m < N={n}")
    return pow(m, e, n)


def rsa_decrypt(c: int, key: RsaPrivateKey | RsaKeyPair) -> int:
    n, d = _modexp_params(key, public=False)
    if not 0 <= c < n:
        raise ValueError(f"ciphertext {c} must satisfy 0 <= c < N={n}")
    return pow(c, d, n)


def _modexp_params(key, public: bool) -> tuple[int, int]:
    if isinstance(key, RsaKeyPair):
        return key.modulus, key.public_exponent if public else key.private_exponent
    return key.modulus, key.exponent


def random_prime(bits: int, rng: np.random.Generator) -> int:
    if not 3 <= bits <= 32:
        raise ValueError("prime size must be 3..32 bits")
    while True:
        candidate = int(rng.integers(1 << (bits - 1), 1 << bits)) | 1
        if is_prime_trial(candidate):
            return candidate


def generate_rsa_keypair(owner: str, rng: np.random.Generator, bits: int = 16) -> RsaKeyPair:
    while True:
        p = random_prime(bits, rng)
        q = random_prime(bits, rng)
        if p == q:
            continue
        phi = (p - 1) * (q - 1)
        for e in (65537, 257, 17, 5, 3):
            if e < phi and math.gcd(e, phi) == 1:
                return rsa_keygen(p, q, e, owner)


# -- symmetric keys and bit plumbing -------------------------------------------

class KeyOrigin(str, enum.Enum):
    FROM_QKD = "FromQkd"
    STATIC = "Static"


@dataclass(frozen=True)
class SymmetricKey:
    key: bytes
    origin: KeyOrigin = KeyOrigin.STATIC

    def __post_init__(self) -> None:
        if len(self.key) != KEY_BYTES:
            raise ValueError(f"symmetric keys are {KEY_BYTES} bytes, got {len(self.key)}")

    def __repr__(self) -> str:
        return f"SymmetricKey(<{self.origin.value}>)"


def bytes_to_bits(data: bytes) -> str:
    """b"hi" -> "0110100001101001"."""
    return "".join(f"{byte:08b}" for byte in data)


def bits_from_string(bits: str) -> np.ndarray:
    return np.fromiter((1 if c == "1" else 0 for c in bits), dtype=np.uint8, count=len(bits))


def derive_symmetric_key(bits, origin: KeyOrigin = KeyOrigin.FROM_QKD) -> SymmetricKey:
    """Pack the first 128 bits, most significant first, into a 16-byte key."""
    if isinstance(bits, str):
        bits = bits_from_string(bits)
    bits = np.asarray(bits, dtype=np.uint8)
    if len(bits) < KEY_BITS:
        raise ValueError(f"need at least {KEY_BITS} bits, got {len(bits)}")
    return SymmetricKey(np.packbits(bits[:KEY_BITS]).tobytes(), origin)


def password_key(password: str) -> SymmetricKey:
    digest = hashlib.sha256(password.encode("utf-8")).digest()
    return derive_symmetric_key(bits_from_string(bytes_to_bits(digest)), KeyOrigin.STATIC)


def random_symmetric_key(rng: np.random.Generator) -> SymmetricKey:
    return SymmetricKey(rng.bytes(KEY_BYTES), KeyOrigin.STATIC)


# -- toy tagged stream cipher --------------------------------------------------

def _keystream(key: bytes, nonce: bytes, length: int) -> bytes:
    blocks = []
    for counter in range((length + 31) // 32):
        blocks.append(hashlib.sha256(key + nonce + counter.to_bytes(4, "big")).digest())
    return b"".join(blocks)[:length]


def _tag(key: bytes, nonce: bytes, ciphertext: bytes) -> bytes:
    return hmac.new(key, nonce + ciphertext, hashlib.sha256).digest()[:TAG_BYTES]


def _xor(a: bytes, b: bytes) -> bytes:
    return (np.frombuffer(a, dtype=np.uint8) ^ np.frombuffer(b, dtype=np.uint8)).tobytes()


def sym_encrypt(key: SymmetricKey, plaintext: bytes, nonce: bytes) -> tuple[bytes, bytes]:
    """Return (ciphertext, tag); the ciphertext has the plaintext's length."""
    if len(nonce) != NONCE_BYTES:
        raise ValueError(f"nonce must be {NONCE_BYTES} bytes")
    ciphertext = _xor(plaintext, _keystream(key.key, nonce, len(plaintext)))
    return ciphertext, _tag(key.key, nonce, ciphertext)


def sym_decrypt(key: SymmetricKey, ciphertext: bytes, nonce: bytes, tag: bytes) -> bytes:
    if not hmac.compare_digest(tag, _tag(key.key, nonce, ciphertext)):
        raise TagMismatch("symmetric tag mismatch")
    return _xor(ciphertext, _keystream(key.key, nonce, len(ciphertext)))


# -- envelopes -----------------------------------------------------------------

class Scheme(enum.IntEnum):
    PUBLIC_KEY = 1
    PRIVATE_KEY = 2
    SYMMETRIC = 3
    PASSWORD = 4


SCHEME_NOTATION = {
    Scheme.PUBLIC_KEY: "E_PU",
    Scheme.PRIVATE_KEY: "E_PR",
    Scheme.SYMMETRIC: "E_SK",
    Scheme.PASSWORD: "E_PASSWORD",
}


@dataclass(frozen=True)
class Envelope:
    scheme: Scheme
    key_id: str
    nonce: bytes
    ciphertext: bytes
    tag: bytes

    @property
    def notation(self) -> str:
        return f"{SCHEME_NOTATION[self.scheme]}-{self.key_id}"

    def to_bytes(self) -> bytes:
        kid = self.key_id.encode("utf-8")
        return b"".join(
            (
                struct.pack(">BH", int(self.scheme), len(kid)),
                kid,
                self.nonce,
                struct.pack(">I", len(self.ciphertext)),
                self.ciphertext,
                self.tag,
            )
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Envelope":
        try:
            scheme_tag, kid_len = struct.unpack_from(">BH", data, 0)
            pos = 3
            key_id = data[pos : pos + kid_len].decode("utf-8")
            if len(key_id.encode("utf-8")) != kid_len:
                raise MalformedEnvelope("truncated key id")
            pos += kid_len
            nonce = data[pos : pos + NONCE_BYTES]
            pos += NONCE_BYTES
            (ct_len,) = struct.unpack_from(">I", data, pos)
            pos += 4
            ciphertext = data[pos : pos + ct_len]
            pos += ct_len
            tag = data[pos : pos + TAG_BYTES]
            pos += TAG_BYTES
            scheme = Scheme(scheme_tag)
        except (struct.error, UnicodeDecodeError, ValueError) as exc:
            if isinstance(exc, MalformedEnvelope):
                raise
            raise MalformedEnvelope(str(exc)) from exc
        if len(nonce) != NONCE_BYTES or len(ciphertext) != ct_len or len(tag) != TAG_BYTES:
            raise MalformedEnvelope("truncated envelope")
        if pos != len(data):
            raise MalformedEnvelope("trailing bytes after envelope")
        return cls(scheme, key_id, nonce, ciphertext, tag)


def _modulus_bytes(modulus: int) -> int:
    return (modulus.bit_length() + 7) // 8


def _content_key(secret: int) -> SymmetricKey:
    return SymmetricKey(hashlib.sha256(b"envelope-kem" + secret.to_bytes(8, "big")).digest()[:KEY_BYTES])


def seal(
    scheme: Scheme,
    payload: bytes,
    key,
    rng: np.random.Generator,
    key_id: str | None = None,
) -> Envelope:
    """Seal ``payload``.

    Public/private schemes wrap a random secret with one RSA exponent and
    derive the stream-cipher key from it; the opener applies the other
    exponent. ``key_id`` defaults to the RSA key owner and is required for
    symmetric and password schemes.
    """
    scheme = Scheme(scheme)
    nonce = rng.bytes(NONCE_BYTES)
    if scheme in (Scheme.PUBLIC_KEY, Scheme.PRIVATE_KEY):
        wanted = RsaPublicKey if scheme is Scheme.PUBLIC_KEY else RsaPrivateKey
        if not isinstance(key, wanted):
            raise WrongKey(f"{scheme.name} sealing needs an {wanted.__name__}")
        secret = int(rng.integers(2, key.modulus - 1))
        wrapped = pow(secret, key.exponent, key.modulus).to_bytes(_modulus_bytes(key.modulus), "big")
        body, tag = sym_encrypt(_content_key(secret), payload, nonce)
        return Envelope(scheme, key_id or key.owner, nonce, wrapped + body, tag)
    if not isinstance(key, SymmetricKey):
        raise WrongKey(f"{scheme.name} sealing needs a SymmetricKey")
    if not key_id:
        raise ValueError("symmetric envelopes need a key id")
    ciphertext, tag = sym_encrypt(key, payload, nonce)
    return Envelope(scheme, key_id, nonce, ciphertext, tag)


def open_envelope(envelope: Envelope | bytes, key) -> bytes:
    if isinstance(envelope, (bytes, bytearray)):
        envelope = Envelope.from_bytes(bytes(envelope))
    scheme = envelope.scheme
    if scheme in (Scheme.PUBLIC_KEY, Scheme.PRIVATE_KEY):
        # sealed with the public key opens with the private one, and vice versa
        wanted = RsaPrivateKey if scheme is Scheme.PUBLIC_KEY else RsaPublicKey
        if not isinstance(key, wanted):
            raise WrongKey(f"{envelope.notation} opens only with an {wanted.__name__}")
        if key.owner != envelope.key_id:
            raise WrongKey(f"{envelope.notation} does not belong to {key.owner!r}")
        width = _modulus_bytes(key.modulus)
        if len(envelope.ciphertext) < width:
            raise MalformedEnvelope("ciphertext shorter than the wrapped secret")
        wrapped = int.from_bytes(envelope.ciphertext[:width], "big")
        if wrapped >= key.modulus:
            raise TagMismatch("wrapped secret outside the modulus")
        secret = pow(wrapped, key.exponent, key.modulus)
        return sym_decrypt(_content_key(secret), envelope.ciphertext[width:], envelope.nonce, envelope.tag)
    if not isinstance(key, SymmetricKey):
        raise WrongKey(f"{envelope.notation} opens only with a SymmetricKey")
    return sym_decrypt(key, envelope.ciphertext, envelope.nonce, envelope.tag)


def tamper(envelope: Envelope) -> Envelope:
    """Flip one ciphertext bit (or a tag bit for empty payloads)."""
    if envelope.ciphertext:
        ct = bytearray(envelope.ciphertext)
        ct[-1] ^= 0x01
        return Envelope(envelope.scheme, envelope.key_id, envelope.nonce, bytes(ct), envelope.tag)
    tag = bytearray(envelope.tag)
    tag[0] ^= 0x01
    return Envelope(envelope.scheme, envelope.key_id, envelope.nonce, envelope.ciphertext, bytes(tag))
