import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcloudsim import crypto as c


def test_rsa_keygen_examples():
    pair = c.rsa_keygen(61, 53, 17)
    assert (pair.modulus, pair.private_exponent) == (3233, 2753)
    small = c.rsa_keygen(3, 5, 3)
    assert (small.modulus, small.private_exponent) == (15, 3)
    with pytest.raises(ValueError):
        c.rsa_keygen(4, 5, 3)
    with pytest.raises(ValueError):
        c.rsa_keygen(61, 53, 3 * 13)  # gcd(39, 3120) = 39


def test_rsa_encrypt_examples():
    pair = c.rsa_keygen(61, 53, 17)
    assert c.rsa_encrypt(65, pair) == 2790
    assert c.rsa_decrypt(2790, pair) == 65
    assert c.rsa_encrypt(0, pair) == 0 and c.rsa_encrypt(1, pair) == 1
    with pytest.raises(ValueError):
        c.rsa_encrypt(3233, pair)


def test_rsa_exhaustive_roundtrip():
    pair = c.rsa_keygen(61, 53, 17)
    m = np.arange(3233)
    assert all(c.rsa_decrypt(c.rsa_encrypt(int(x), pair), pair) == x for x in m)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(8, 20))
def test_generated_keypairs_satisfy_ed_identity(seed, bits):
    pair = c.generate_rsa_keypair("p", np.random.default_rng(seed), bits=bits)
    phi = (pair.p - 1) * (pair.q - 1)
    assert pair.p != pair.q
    assert (pair.public_exponent * pair.private_exponent) % phi == 1
    assert math.gcd(pair.public_exponent, phi) == 1


def test_derive_symmetric_key():
    assert c.derive_symmetric_key("0" * 128).key == bytes(16)
    key = c.derive_symmetric_key("1" + "0" * 127).key
    assert key[0] == 0x80 and key[1:] == bytes(15)
    bits = np.random.default_rng(0).integers(0, 2, 200)
    assert c.derive_symmetric_key(bits) == c.derive_symmetric_key(bits)
    with pytest.raises(ValueError):
        c.derive_symmetric_key("0" * 127)


def test_derive_is_injective_on_random_samples():
    rng = np.random.default_rng(1)
    seen = {}
    for _ in range(5000):
        bits = rng.integers(0, 2, 128)
        key = c.derive_symmetric_key(bits).key
        seen.setdefault(key, bits.tobytes())
        assert seen[key] == bits.tobytes()


def test_hi_encoding():
    assert c.bytes_to_bits(b"hi") == "0110100001101001"


def test_sym_roundtrip_and_nonce():
    key = c.random_symmetric_key(np.random.default_rng(2))
    ct, tag = c.sym_encrypt(key, b"payload bytes", b"\x00" * 8)
    assert c.sym_decrypt(key, ct, b"\x00" * 8, tag) == b"payload bytes"
    ct2, _ = c.sym_encrypt(key, b"payload bytes", b"\x00" * 7 + b"\x01")
    assert ct != ct2
    with pytest.raises(c.TagMismatch):
        c.sym_decrypt(key, ct, b"\x00" * 7 + b"\x01", tag)


@settings(max_examples=100, deadline=None)
@given(st.binary(min_size=0, max_size=200), st.integers(0, 2**32 - 1))
def test_envelope_roundtrip_all_schemes(payload, seed):
    rng = np.random.default_rng(seed)
    pair = c.generate_rsa_keypair("alice", rng)
    sym = c.random_symmetric_key(rng)
    assert c.open_envelope(c.seal(c.Scheme.PUBLIC_KEY, payload, pair.public(), rng), pair.private()) == payload
    assert c.open_envelope(c.seal(c.Scheme.PRIVATE_KEY, payload, pair.private(), rng), pair.public()) == payload
    env = c.seal(c.Scheme.SYMMETRIC, payload, sym, rng, key_id="s")
    assert c.open_envelope(c.Envelope.from_bytes(env.to_bytes()), sym) == payload
    pw = c.password_key("hunter2")
    assert c.open_envelope(c.seal(c.Scheme.PASSWORD, payload, pw, rng, key_id="alice"), pw) == payload


def test_wrong_keys_fail():
    rng = np.random.default_rng(3)
    alice = c.generate_rsa_keypair("alice", rng)
    bob = c.generate_rsa_keypair("bob", rng)
    signed = c.seal(c.Scheme.PRIVATE_KEY, b"ids", alice.private(), rng)
    assert signed.notation == "E_PR-alice"
    with pytest.raises(c.WrongKey):
        c.open_envelope(signed, bob.public())
    with pytest.raises(c.WrongKey):
        c.open_envelope(signed, alice.private())
    sym = c.random_symmetric_key(rng)
    env = c.seal(c.Scheme.SYMMETRIC, b"secret", sym, rng, key_id="x")
    with pytest.raises(c.TagMismatch):
        c.open_envelope(env, c.random_symmetric_key(rng))
    with pytest.raises(c.TagMismatch):
        c.open_envelope(c.tamper(env), sym)


def test_envelope_fuzz_never_opens_with_wrong_key():
    rng = np.random.default_rng(4)
    right = c.random_symmetric_key(rng)
    opened = 0
    for i in range(10_000):
        env = c.seal(c.Scheme.SYMMETRIC, b"confidential file", right, rng, key_id="k")
        assert env.ciphertext != b"confidential file"
        try:
            c.open_envelope(env, c.random_symmetric_key(rng))
            opened += 1
        except c.TagMismatch:
            pass
    assert opened == 0


def test_malformed_envelope_bytes():
    with pytest.raises(c.MalformedEnvelope):
        c.Envelope.from_bytes(b"\x01\x00")
