"""Dense state-vector simulator used by the Shor and Grover demos.

Qubit 0 is the least-significant bit of a basis index, so for two qubits the
basis order is |q1 q0> = |00>, |01>, |10>, |11>.

Gate functions return a new :class:`StateVector`; only :func:`measure_all`
mutates its argument (the collapse).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_QUBITS = 20
NORM_TOLERANCE = 1e-9
ROUNDTRIP_TOLERANCE = 1e-10


class QsimError(ValueError):
    """Bad qubit index, range, or operator."""


class NormalizationError(RuntimeError):
    """A state drifted away from unit norm."""


@dataclass(frozen=True)
class MeasurementOutcome:
    basis_index: int
    probability: float


class StateVector:
    __slots__ = ("num_qubits", "amplitudes")

    def __init__(self, num_qubits: int, amplitudes: np.ndarray):
        if not 1 <= num_qubits <= MAX_QUBITS:
            raise QsimError(f"num_qubits must be in 1..{MAX_QUBITS}, got {num_qubits}")
        amplitudes = np.asarray(amplitudes, dtype=np.complex128)
        if amplitudes.shape != (1 << num_qubits,):
            raise QsimError(
                f"expected {1 << num_qubits} amplitudes, got shape {amplitudes.shape}"
            )
        self.num_qubits = num_qubits
        self.amplitudes = amplitudes
        _check_norm(self)

    @property
    def dimension(self) -> int:
        return 1 << self.num_qubits

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def copy(self) -> "StateVector":
        return StateVector(self.num_qubits, self.amplitudes.copy())

    def __repr__(self) -> str:
        return f"StateVector(num_qubits={self.num_qubits})"


def _check_norm(state: StateVector) -> None:
    norm = float(np.vdot(state.amplitudes, state.amplitudes).real)
    if abs(norm - 1.0) > NORM_TOLERANCE:
        raise NormalizationError(f"state norm {norm!r} deviates from 1")


def _check_qubit(state: StateVector, qubit: int) -> None:
    if not 0 <= qubit < state.num_qubits:
        raise QsimError(f"qubit {qubit} out of range for {state.num_qubits} qubits")


def init_state(num_qubits: int) -> StateVector:
    if not 1 <= num_qubits <= MAX_QUBITS:
        raise QsimError(f"num_qubits must be in 1..{MAX_QUBITS}, got {num_qubits}")
    amps = np.zeros(1 << num_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(num_qubits, amps)


def basis_state(num_qubits: int, index: int) -> StateVector:
    """|index> on ``num_qubits`` qubits."""
    state = init_state(num_qubits)
    if not 0 <= index < state.dimension:
        raise QsimError(f"basis index {index} out of range")
    state.amplitudes[0] = 0.0
    state.amplitudes[index] = 1.0
    return state


def apply_hadamard(state: StateVector, target: int) -> StateVector:
    _check_qubit(state, target)
    # view as (high bits, target bit, low bits)
    view = state.amplitudes.reshape(-1, 2, 1 << target)
    a0 = view[:, 0, :]
    a1 = view[:, 1, :]
    out = np.empty_like(view)
    s = 1.0 / math.sqrt(2.0)
    out[:, 0, :] = (a0 + a1) * s
    out[:, 1, :] = (a0 - a1) * s
    return StateVector(state.num_qubits, out.reshape(-1))


def apply_hadamard_all(state: StateVector, qubits: Sequence[int] | None = None) -> StateVector:
    for q in range(state.num_qubits) if qubits is None else qubits:
        state = apply_hadamard(state, q)
    return state


def apply_controlled_phase(
    state: StateVector, control: int, target: int, angle: float
) -> StateVector:
    _check_qubit(state, control)
    _check_qubit(state, target)
    if control == target:
        raise QsimError("control and target must differ")
    lo, hi = sorted((control, target))
    amps = state.amplitudes.copy()
    view = amps.reshape(-1, 2, 1 << (hi - lo - 1), 2, 1 << lo)
    view[:, 1, :, 1, :] *= np.exp(1j * angle)
    return StateVector(state.num_qubits, amps)


def apply_swap(state: StateVector, a: int, b: int) -> StateVector:
    _check_qubit(state, a)
    _check_qubit(state, b)
    if a == b:
        return state.copy()
    idx = np.arange(state.dimension)
    bit_a = (idx >> a) & 1
    bit_b = (idx >> b) & 1
    swapped = idx ^ ((bit_a ^ bit_b) << a) ^ ((bit_a ^ bit_b) << b)
    return apply_permutation(state, swapped)


def apply_phase_flip(state: StateVector, index: int) -> StateVector:
    """Negate the amplitude of one basis state (a single-item oracle)."""
    if not 0 <= index < state.dimension:
        raise QsimError(f"basis index {index} out of range")
    amps = state.amplitudes.copy()
    amps[index] = -amps[index]
    return StateVector(state.num_qubits, amps)


def apply_permutation(state: StateVector, perm: Sequence[int] | np.ndarray) -> StateVector:
    """Move the amplitude at index ``i`` to index ``perm[i]``."""
    perm = np.asarray(perm, dtype=np.int64)
    n = state.dimension
    if perm.shape != (n,):
        raise QsimError(f"permutation must have length {n}")
    if perm.min(initial=0) < 0 or perm.max(initial=0) >= n:
        raise QsimError("permutation maps outside the basis")
    if np.bincount(perm, minlength=n).max() != 1:
        raise QsimError("map is not a bijection")
    amps = np.empty_like(state.amplitudes)
    amps[perm] = state.amplitudes
    return StateVector(state.num_qubits, amps)


def _check_range(state: StateVector, qubits: Sequence[int]) -> list[int]:
    qubits = list(qubits)
    if not qubits:
        raise QsimError("qubit range is empty")
    for q in qubits:
        _check_qubit(state, q)
    if len(set(qubits)) != len(qubits):
        raise QsimError("qubit range has duplicates")
    return qubits


def qft(state: StateVector, qubits: Sequence[int] | range | None = None) -> StateVector:
    """Quantum Fourier transform over ``qubits`` (least-significant first).

    The register value k = sum(bit(qubits[i]) << i) is mapped to
    (1/sqrt(M)) * sum_j exp(2*pi*i*j*k/M) |j>, built from Hadamards,
    controlled phases and a final bit reversal.
    """
    qubits = _check_range(state, range(state.num_qubits) if qubits is None else qubits)
    m = len(qubits)
    for i in reversed(range(m)):
        state = apply_hadamard(state, qubits[i])
        for j in reversed(range(i)):
            state = apply_controlled_phase(
                state, qubits[j], qubits[i], math.pi / (1 << (i - j))
            )
    for i in range(m // 2):
        state = apply_swap(state, qubits[i], qubits[m - 1 - i])
    return state


def inverse_qft(state: StateVector, qubits: Sequence[int] | range | None = None) -> StateVector:
    qubits = _check_range(state, range(state.num_qubits) if qubits is None else qubits)
    m = len(qubits)
    for i in range(m // 2):
        state = apply_swap(state, qubits[i], qubits[m - 1 - i])
    for i in range(m):
        for j in range(i):
            state = apply_controlled_phase(
                state, qubits[j], qubits[i], -math.pi / (1 << (i - j))
            )
        state = apply_hadamard(state, qubits[i])
    return state


def measure_all(state: StateVector, rng: np.random.Generator) -> MeasurementOutcome:
    """Sample a basis index with probability |amplitude|^2 and collapse ``state``."""
    probs = state.probabilities()
    total = float(probs.sum())
    if total <= 0.0:
        raise NormalizationError("cannot measure an all-zero state")
    cdf = np.cumsum(probs / total)
    index = int(np.searchsorted(cdf, rng.random(), side="right"))
    index = min(index, state.dimension - 1)
    # never land on a zero-probability index through rounding at the top of the cdf
    while probs[index] == 0.0:
        index -= 1
    outcome = MeasurementOutcome(index, float(probs[index] / total))
    state.amplitudes[:] = 0.0
    state.amplitudes[index] = 1.0
    return outcome
