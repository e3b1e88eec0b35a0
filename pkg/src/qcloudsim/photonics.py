"""Polarization-encoded photons, the quantum channel, and intercept-resend eavesdropping.

Encoding table (basis, bit) -> polarization angle:

    rectilinear  0 -> 0 deg (horizontal)    1 -> 90 deg (vertical)
    diagonal     0 -> 45 deg                1 -> 135 deg

Photons come singly (:class:`PolarizedPhoton`) or as a :class:`PhotonTrain`
for whole-key transmissions; both are single-use once handed to a channel.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Basis(enum.IntEnum):
    RECTILINEAR = 0
    DIAGONAL = 1

    @property
    def symbol(self) -> str:
        return "+" if self is Basis.RECTILINEAR else "x"

    @classmethod
    def parse(cls, text: str) -> "Basis":
        if text == "+":
            return cls.RECTILINEAR
        if text.lower() in ("x", "×"):
            return cls.DIAGONAL
        raise ValueError(f"unknown basis symbol {text!r}")


POLARIZATION_DEGREES = {
    (Basis.RECTILINEAR, 0): 0,
    (Basis.RECTILINEAR, 1): 90,
    (Basis.DIAGONAL, 0): 45,
    (Basis.DIAGONAL, 1): 135,
}

POLARIZATION_NAMES = {0: "horizontal", 90: "vertical", 45: "diagonal", 135: "anti-diagonal"}


class PhotonConsumedError(RuntimeError):
    """A photon (or train) was reused after it entered a channel."""


def bases_to_string(bases: np.ndarray) -> str:
    return "".join("+" if b == 0 else "x" for b in bases)


def bits_to_string(bits: np.ndarray) -> str:
    return "".join("1" if b else "0" for b in bits)


class PolarizedPhoton:
    __slots__ = ("_basis", "_bit", "consumed")

    def __init__(self, bit: int, basis: Basis):
        if bit not in (0, 1):
            raise ValueError(f"bit must be 0 or 1, got {bit!r}")
        self._basis = Basis(basis)
        self._bit = int(bit)
        self.consumed = False

    def _require_live(self) -> None:
        if self.consumed:
            raise PhotonConsumedError("photon already entered a channel")

    @property
    def basis(self) -> Basis:
        self._require_live()
        return self._basis

    @property
    def bit(self) -> int:
        self._require_live()
        return self._bit

    @property
    def polarization_degrees(self) -> int:
        return POLARIZATION_DEGREES[(self.basis, self.bit)]

    @property
    def polarization(self) -> str:
        return POLARIZATION_NAMES[self.polarization_degrees]

    def _collapse(self, bit: int, basis: Basis) -> None:
        self._bit, self._basis = bit, basis

    def _consume(self) -> tuple[int, Basis]:
        self._require_live()
        state = (self._bit, self._basis)
        # the prior state must not survive in this object
        self._bit = self._basis = None
        self.consumed = True
        return state

    def __repr__(self) -> str:
        if self.consumed:
            return "PolarizedPhoton(<consumed>)"
        return f"PolarizedPhoton(bit={self._bit}, basis={self._basis.symbol})"


def prepare_photon(bit: int, basis: Basis) -> PolarizedPhoton:
    return PolarizedPhoton(bit, basis)


def measure_photon(photon: PolarizedPhoton, basis: Basis, rng: np.random.Generator) -> int:
    """Measure in ``basis``. A wrong basis yields a fair coin and collapses the photon."""
    photon._require_live()
    basis = Basis(basis)
    if photon._basis == basis:
        return photon._bit
    bit = int(rng.integers(0, 2))
    photon._collapse(bit, basis)
    return bit


class PhotonTrain:
    """A sequence of photons sent back-to-back, stored as bit and basis arrays."""

    __slots__ = ("_bits", "_bases", "consumed")

    def __init__(self, bits: np.ndarray, bases: np.ndarray):
        bits = np.asarray(bits, dtype=np.uint8)
        bases = np.asarray(bases, dtype=np.uint8)
        if bits.shape != bases.shape or bits.ndim != 1:
            raise ValueError("bits and bases must be 1-d arrays of equal length")
        if bits.size and (bits.max() > 1 or bases.max() > 1):
            raise ValueError("bits and bases must be 0/1 valued")
        self._bits = bits.copy()
        self._bases = bases.copy()
        self.consumed = False

    def __len__(self) -> int:
        return 0 if self._bits is None else len(self._bits)

    def _require_live(self) -> None:
        if self.consumed:
            raise PhotonConsumedError("photon train already entered a channel")

    def measure(self, bases: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Measure every photon; mismatched positions give coin flips and collapse."""
        self._require_live()
        bases = np.asarray(bases, dtype=np.uint8)
        if bases.shape != self._bases.shape:
            raise ValueError("measurement bases must match train length")
        coins = rng.integers(0, 2, size=len(bases), dtype=np.uint8)
        same = bases == self._bases
        out = np.where(same, self._bits, coins).astype(np.uint8)
        self._bits = out.copy()
        self._bases = bases.copy()
        return out

    def _consume(self) -> tuple[np.ndarray, np.ndarray]:
        self._require_live()
        state = (self._bits, self._bases)
        self._bits = self._bases = None
        self.consumed = True
        return state


def prepare_train(bits: np.ndarray, bases: np.ndarray) -> PhotonTrain:
    return PhotonTrain(bits, bases)


@dataclass
class Eavesdropper:
    """Intercept-resend adversary with its own random stream.

    ``log`` holds ``(index, measured_bit, basis)`` for every photon it took,
    where ``index`` counts all photons that ever passed this eavesdropper.
    """

    rng: np.random.Generator
    interception_probability: float = 1.0
    stream_id: str = "eve"
    strategy: str = "intercept-resend"
    _indices: list[np.ndarray] = field(default_factory=list, repr=False)
    _bits: list[np.ndarray] = field(default_factory=list, repr=False)
    _bases: list[np.ndarray] = field(default_factory=list, repr=False)
    photons_seen: int = 0
    _last_length: int = field(default=0, repr=False)

    def __post_init__(self) -> None:
        _check_probability("interception_probability", self.interception_probability)

    def intercept(
        self, bits: np.ndarray, bases: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Measure-and-resend on a random subset.

        Returns the resent (bits, bases) and a boolean mask of intercepted
        positions. The incoming arrays are not retained.
        """
        n = len(bits)
        take = self.rng.random(n) < self.interception_probability
        eve_bases = self.rng.integers(0, 2, size=n, dtype=np.uint8)
        coins = self.rng.integers(0, 2, size=n, dtype=np.uint8)
        measured = np.where(eve_bases == bases, bits, coins).astype(np.uint8)
        out_bits = np.where(take, measured, bits).astype(np.uint8)
        out_bases = np.where(take, eve_bases, bases).astype(np.uint8)
        where = np.flatnonzero(take)
        self._indices.append(where + self.photons_seen)
        self._bits.append(measured[where])
        self._bases.append(eve_bases[where])
        self.photons_seen += n
        self._last_length = n
        return out_bits, out_bases, take

    @property
    def log(self) -> list[tuple[int, int, Basis]]:
        return [
            (int(i), int(b), Basis(int(s)))
            for chunk_i, chunk_b, chunk_s in zip(self._indices, self._bits, self._bases)
            for i, b, s in zip(chunk_i, chunk_b, chunk_s)
        ]

    @property
    def log_size(self) -> int:
        return sum(len(c) for c in self._indices)

    def last_observation(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(positions within the last train, measured bits, bases) for that train."""
        if not self._indices:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty.astype(np.uint8), empty.astype(np.uint8)
        start = self.photons_seen - self._last_length
        return self._indices[-1] - start, self._bits[-1], self._bases[-1]


def _check_probability(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {value!r}")


@dataclass
class QuantumChannel:
    noise_flip_probability: float = 0.0
    eavesdropper: Eavesdropper | None = None

    def __post_init__(self) -> None:
        _check_probability("noise_flip_probability", self.noise_flip_probability)


@dataclass(frozen=True)
class TransmissionReport:
    """What happened to one train in flight; used for trace auditing."""

    length: int
    intercepted: int
    flipped: int


def _channel_apply(
    channel: QuantumChannel, bits: np.ndarray, bases: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, TransmissionReport]:
    intercepted = 0
    if channel.eavesdropper is not None:
        bits, bases, take = channel.eavesdropper.intercept(bits, bases)
        intercepted = int(take.sum())
    flipped = 0
    if channel.noise_flip_probability > 0:
        flips = rng.random(len(bits)) < channel.noise_flip_probability
        bits = (bits ^ flips.astype(np.uint8)).astype(np.uint8)
        flipped = int(flips.sum())
    return bits, bases, TransmissionReport(len(bits), intercepted, flipped)


def transmit(
    channel: QuantumChannel, photon: PolarizedPhoton, rng: np.random.Generator
) -> PolarizedPhoton:
    """Send one photon; the input is consumed and a fresh photon arrives."""
    bit, basis = photon._consume()
    bits, bases, _ = _channel_apply(
        channel, np.array([bit], dtype=np.uint8), np.array([basis], dtype=np.uint8), rng
    )
    return PolarizedPhoton(int(bits[0]), Basis(int(bases[0])))


def transmit_train(
    channel: QuantumChannel, train: PhotonTrain, rng: np.random.Generator
) -> tuple[PhotonTrain, TransmissionReport]:
    bits, bases = train._consume()
    bits, bases, report = _channel_apply(channel, bits, bases, rng)
    return PhotonTrain(bits, bases), report
