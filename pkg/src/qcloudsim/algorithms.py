"""Shor factoring and Grover search at desk scale, on top of :mod:`qcloudsim.qsim`."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import qsim

RETRY_BUDGET = 32


class AlgorithmError(ValueError):
    pass


class QubitBudgetExceeded(AlgorithmError):
    pass


class RetriesExhausted(RuntimeError):
    pass


class PrimePowerError(AlgorithmError):
    pass


@dataclass(frozen=True)
class ShorResult:
    n: int
    chosen_a: int
    # None when gcd(a, n) > 1 already split n and no order finding was run
    order_r: int | None
    factors: tuple[int, int]
    attempts: int


@dataclass(frozen=True)
class GroverResult:
    search_space_size: int
    marked_index: int
    iterations: int
    success_probability: float
    measured_index: int

    @property
    def found(self) -> bool:
        return self.measured_index == self.marked_index


# -- classical helpers -----------------------------------------------------

def classical_order(a: int, n: int) -> int:
    """Multiplicative order of ``a`` mod ``n`` by iteration."""
    if math.gcd(a, n) != 1:
        raise AlgorithmError(f"{a} is not a unit mod {n}")
    x, r = a % n, 1
    while x != 1:
        x = (x * a) % n
        r += 1
    return r


def _prime_factors(m: int) -> list[int]:
    out, p = [], 2
    while p * p <= m:
        if m % p == 0:
            out.append(p)
            while m % p == 0:
                m //= p
        p += 1
    if m > 1:
        out.append(m)
    return out


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    p = 3
    while p * p <= n:
        if n % p == 0:
            return False
        p += 2
    return True


def prime_power_base(n: int) -> int | None:
    """Return p if n == p**k for a prime p and k >= 1, else None."""
    for p in _prime_factors(n):
        m = n
        while m % p == 0:
            m //= p
        return p if m == 1 else None
    return None


def reduce_to_order(a: int, n: int, multiple: int) -> int:
    """Shrink a known multiple of the order of ``a`` down to the order itself."""
    r = multiple
    for p in _prime_factors(multiple):
        while r % p == 0 and pow(a, r // p, n) == 1:
            r //= p
    return r


def continued_fraction_period(measured: int, register_size: int, n: int) -> int | None:
    """Denominator of the best approximation to measured/M with denominator < n.

    Walks the continued-fraction convergents of measured/M and, at the point
    where the next convergent's denominator would reach n, also considers the
    largest admissible semiconvergent.
    """
    if not 0 <= measured < register_size:
        raise AlgorithmError("measured value outside the register")
    if measured == 0:
        return None
    bound = n - 1
    num, den = measured, register_size
    p0, q0, p1, q1 = 0, 1, 1, 0
    while True:
        a = num // den
        q2 = q0 + a * q1
        if q2 > bound:
            break
        p0, q0, p1, q1 = p1, q1, p0 + a * p1, q2
        num, den = den, num - a * den
        if den == 0:
            return q1
    k = (bound - q0) // q1
    semi_p, semi_q = p0 + k * p1, q0 + k * q1
    target = measured / register_size
    # ties go to the convergent, which has the smaller denominator
    if abs(target - semi_p / semi_q) < abs(target - p1 / q1):
        return semi_q
    return q1


# -- order finding ---------------------------------------------------------

def order_finding_registers(n: int) -> tuple[int, int]:
    """(counting qubits, work qubits) for modulus ``n``."""
    work = max(1, math.ceil(math.log2(n)))
    return 2 * work, work


def _controlled_mulmod_permutation(
    multiplier: int, n: int, control: int, counting: int, work: int
) -> np.ndarray:
    idx = np.arange(1 << (counting + work), dtype=np.int64)
    y = idx >> counting
    low = idx & ((1 << counting) - 1)
    active = ((idx >> control) & 1).astype(bool) & (y < n)
    new_y = np.where(active, (y * multiplier) % n, y)
    return (new_y << counting) | low


def order_finding_state(a: int, n: int) -> tuple[qsim.StateVector, int]:
    """Phase-estimation state for x -> a*x mod n just before measurement."""
    amplitudes, counting = _order_finding_amplitudes(a, n)
    total = counting + order_finding_registers(n)[1]
    return qsim.StateVector(total, amplitudes.copy()), counting


@lru_cache(maxsize=4)
def _order_finding_amplitudes(a: int, n: int) -> tuple[np.ndarray, int]:
    counting, work = order_finding_registers(n)
    total = counting + work
    if total > qsim.MAX_QUBITS:
        raise QubitBudgetExceeded(
            f"n={n} needs {total} qubits, cap is {qsim.MAX_QUBITS}"
        )
    state = qsim.basis_state(total, 1 << counting)  # work register holds |1>
    state = qsim.apply_hadamard_all(state, range(counting))
    for j in range(counting):
        multiplier = pow(a, 1 << j, n)
        if multiplier == 1:
            continue
        perm = _controlled_mulmod_permutation(multiplier, n, j, counting, work)
        state = qsim.apply_permutation(state, perm)
    state = qsim.inverse_qft(state, range(counting))
    state.amplitudes.flags.writeable = False
    return state.amplitudes, counting


def find_order(
    a: int, n: int, rng: np.random.Generator, max_attempts: int = RETRY_BUDGET
) -> int:
    if not 1 < a < n:
        raise AlgorithmError(f"need 1 < a < n, got a={a}, n={n}")
    if math.gcd(a, n) != 1:
        raise AlgorithmError(f"gcd({a}, {n}) != 1")
    state, counting = order_finding_state(a, n)
    register_size = 1 << counting
    for _ in range(max_attempts):
        # the circuit is deterministic up to measurement, so a retry re-measures a fresh copy
        outcome = qsim.measure_all(state.copy(), rng)
        measured = outcome.basis_index & (register_size - 1)
        q = continued_fraction_period(measured, register_size, n)
        if q is None:
            continue
        for candidate in range(q, n, q):
            if pow(a, candidate, n) == 1:
                return reduce_to_order(a, n, candidate)
    raise RetriesExhausted(f"order of {a} mod {n} not found in {max_attempts} attempts")


def shor_factor(
    n: int, rng: np.random.Generator, max_attempts: int = RETRY_BUDGET
) -> ShorResult:
    if n < 4 or n % 2 == 0:
        raise AlgorithmError(f"n must be odd and composite, got {n}")
    if n > 1 << 20:
        raise QubitBudgetExceeded(f"n={n} is beyond desk scale")
    if is_prime(n):
        raise AlgorithmError(f"{n} is prime")
    base = prime_power_base(n)
    if base is not None:
        raise PrimePowerError(f"{n} is a power of {base}")
    for attempt in range(1, max_attempts + 1):
        a = int(rng.integers(2, n))
        g = math.gcd(a, n)
        if g > 1:
            return _result(n, a, None, g, attempt)
        try:
            r = find_order(a, n, rng)
        except RetriesExhausted:
            continue
        if r % 2:
            continue
        half = pow(a, r // 2, n)
        if half == n - 1:
            continue
        for f in (math.gcd(half - 1, n), math.gcd(half + 1, n)):
            if 1 < f < n:
                return _result(n, a, r, f, attempt)
    raise RetriesExhausted(f"no factor of {n} after {max_attempts} attempts")


def _result(n: int, a: int, r: int | None, f: int, attempts: int) -> ShorResult:
    lo, hi = sorted((f, n // f))
    if lo * hi != n:
        raise AssertionError(f"factor check failed: {lo} * {hi} != {n}")
    return ShorResult(n=n, chosen_a=a, order_r=r, factors=(lo, hi), attempts=attempts)


# -- Grover ----------------------------------------------------------------

def grover_optimal_iterations(size: int) -> int:
    if size < 1 or size & (size - 1):
        raise AlgorithmError(f"search space size must be a power of 2, got {size}")
    return math.floor(math.pi / 4 * math.sqrt(size))


def grover_success_closed_form(size: int, iterations: int) -> float:
    theta = math.asin(math.sqrt(1.0 / size))
    return math.sin((2 * iterations + 1) * theta) ** 2


def grover_diffusion(state: qsim.StateVector) -> qsim.StateVector:
    state = qsim.apply_hadamard_all(state)
    state = qsim.apply_phase_flip(state, 0)
    state = qsim.apply_hadamard_all(state)
    # H Z0 H is I - 2|s><s|; the global sign is dropped to get 2|s><s| - I
    return qsim.StateVector(state.num_qubits, -state.amplitudes)


def grover_search(
    marked_index: int, num_qubits: int, iterations: int, rng: np.random.Generator
) -> GroverResult:
    size = 1 << num_qubits
    if not 0 <= marked_index < size:
        raise AlgorithmError(f"marked index {marked_index} outside 0..{size - 1}")
    if iterations < 0:
        raise AlgorithmError("iterations must be non-negative")
    state = qsim.apply_hadamard_all(qsim.init_state(num_qubits))
    for _ in range(iterations):
        state = qsim.apply_phase_flip(state, marked_index)
        state = grover_diffusion(state)
    success = float(abs(state.amplitudes[marked_index]) ** 2)
    outcome = qsim.measure_all(state, rng)
    return GroverResult(
        search_space_size=size,
        marked_index=marked_index,
        iterations=iterations,
        success_probability=success,
        measured_index=outcome.basis_index,
    )


# -- static context ----------------------------------------------------------

FACTORIZATION = "Factorization"
DISCRETE_LOG = "Discrete Logarithm Problem"

BROKEN_SYSTEMS: tuple[tuple[str, str], ...] = (
    ("RSA", FACTORIZATION),
    ("Rabin's Cryptosystem", FACTORIZATION),
    ("KMOV", FACTORIZATION),
    ("Diffie-Hellman Key Exchange", DISCRETE_LOG),
    ("El Gamal", DISCRETE_LOG),
    ("Elliptic Curve Cryptography (ECC)", DISCRETE_LOG),
    ("Digital Signature Algorithm (DSA)", DISCRETE_LOG),
)


def broken_systems_report() -> tuple[tuple[str, str], ...]:
    return BROKEN_SYSTEMS


def lookup_hard_problem(system: str) -> str | None:
    """Find a cryptosystem by name or parenthesised abbreviation."""
    key = system.strip().lower()
    for name, problem in BROKEN_SYSTEMS:
        short = name[name.find("(") + 1 : -1] if "(" in name else None
        if key == name.lower() or (short and key == short.lower()):
            return problem
    return None
