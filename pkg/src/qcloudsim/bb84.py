"""BB84: prepare and measure, sifting, sampled QBER check, accept or abort."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .photonics import PhotonTrain, QuantumChannel, TransmissionReport, transmit_train

DEFAULT_QBER_THRESHOLD = 0.11
DEFAULT_SAMPLE_FRACTION = 0.5


class AbortReason(str, enum.Enum):
    QBER_EXCEEDED = "QberExceeded"
    INSUFFICIENT_KEY = "InsufficientKey"


@dataclass(frozen=True)
class Bb84Config:
    num_photons: int = 1024
    sample_fraction: float = DEFAULT_SAMPLE_FRACTION
    qber_threshold: float = DEFAULT_QBER_THRESHOLD
    min_key_bits: int = 128
    # a fixed number of disclosed positions, overriding sample_fraction
    sample_size: int | None = None

    def __post_init__(self) -> None:
        if self.num_photons < 16:
            raise ValueError("num_photons must be at least 16")
        if not 0.0 < self.sample_fraction < 1.0:
            raise ValueError("sample_fraction must be in (0, 1)")
        if not 0.0 < self.qber_threshold < 1.0:
            raise ValueError("qber_threshold must be in (0, 1)")
        if self.min_key_bits < 1:
            raise ValueError("min_key_bits must be positive")
        expected_sifted = self.num_photons / 2
        if self.sample_size is None:
            residual = expected_sifted * (1.0 - self.sample_fraction)
        else:
            if self.sample_size < 1:
                raise ValueError("sample_size must be positive")
            residual = expected_sifted - self.sample_size
        if residual < self.min_key_bits:
            raise ValueError(
                f"expected residual key {residual:.0f} bits is below min_key_bits={self.min_key_bits}"
            )


@dataclass
class Bb84Transcript:
    alice_bits: np.ndarray
    alice_bases: np.ndarray
    bob_bases: np.ndarray
    bob_bits: np.ndarray
    sifted_indices: np.ndarray
    sample_indices: np.ndarray
    qber: float | None
    abort_reason: AbortReason | None
    key_indices: np.ndarray
    transmission: TransmissionReport | None = None

    @property
    def accepted(self) -> bool:
        return self.abort_reason is None

    @property
    def alice_key(self) -> np.ndarray | None:
        return self.alice_bits[self.key_indices] if self.accepted else None

    @property
    def bob_key(self) -> np.ndarray | None:
        return self.bob_bits[self.key_indices] if self.accepted else None

    @property
    def key_mismatches(self) -> int:
        """Residual disagreement inside an accepted key (noise below threshold)."""
        if not self.accepted:
            return 0
        return int((self.alice_key != self.bob_key).sum())

    @property
    def sample_mismatches(self) -> int:
        s = self.sample_indices
        return int((self.alice_bits[s] != self.bob_bits[s]).sum())

    @property
    def verdict(self) -> str:
        return "Accepted" if self.accepted else f"Aborted({self.abort_reason.value})"


def sift(alice_bases, bob_bases) -> np.ndarray:
    alice_bases = np.asarray(alice_bases)
    bob_bases = np.asarray(bob_bases)
    if alice_bases.shape != bob_bases.shape:
        raise ValueError("basis sequences differ in length")
    return np.flatnonzero(alice_bases == bob_bases)


def estimate_qber(alice_bits, bob_bits, sample_indices) -> float:
    sample_indices = np.asarray(sample_indices, dtype=np.int64)
    if sample_indices.size == 0:
        raise ValueError("cannot estimate QBER from an empty sample")
    a = np.asarray(alice_bits)[sample_indices]
    b = np.asarray(bob_bits)[sample_indices]
    return float((a != b).sum()) / sample_indices.size


def detection_probability(sample_size: int) -> float:
    """Chance that at least one of ``sample_size`` checked bits exposes full intercept-resend."""
    if sample_size < 0:
        raise ValueError("sample size must be non-negative")
    return 1.0 - 0.75**sample_size


def choose_sample(
    sifted: np.ndarray, config: Bb84Config, rng: np.random.Generator
) -> np.ndarray:
    if config.sample_size is not None:
        k = min(config.sample_size, len(sifted))
    else:
        k = int(round(config.sample_fraction * len(sifted)))
    picked = rng.choice(len(sifted), size=k, replace=False) if k else np.zeros(0, dtype=np.int64)
    return np.sort(sifted[picked])


def run_bb84(
    config: Bb84Config,
    channel: QuantumChannel,
    rng_alice: np.random.Generator,
    rng_bob: np.random.Generator,
) -> Bb84Transcript:
    n = config.num_photons
    alice_bits = rng_alice.integers(0, 2, size=n, dtype=np.uint8)
    alice_bases = rng_alice.integers(0, 2, size=n, dtype=np.uint8)
    received, report = transmit_train(channel, PhotonTrain(alice_bits, alice_bases), rng_bob)
    bob_bases = rng_bob.integers(0, 2, size=n, dtype=np.uint8)
    bob_bits = received.measure(bob_bases, rng_bob)

    # public discussion: bases first, then Alice picks and discloses the sample
    sifted = sift(alice_bases, bob_bases)
    sample = choose_sample(sifted, config, rng_alice)
    key_indices = np.setdiff1d(sifted, sample, assume_unique=True)

    qber = None
    reason = None
    if len(sample):
        qber = estimate_qber(alice_bits, bob_bits, sample)
        if qber > config.qber_threshold:
            reason = AbortReason.QBER_EXCEEDED
    if reason is None and (len(sample) == 0 or len(key_indices) < config.min_key_bits):
        reason = AbortReason.INSUFFICIENT_KEY
    return Bb84Transcript(
        alice_bits=alice_bits,
        alice_bases=alice_bases,
        bob_bases=bob_bases,
        bob_bits=bob_bits,
        sifted_indices=sifted,
        sample_indices=sample,
        qber=qber,
        abort_reason=reason,
        key_indices=key_indices,
        transmission=report,
    )
