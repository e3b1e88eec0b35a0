"""Seeded scenario runner: config in, (transcript, stats, trace) out.

Config files are JSON objects::

    {"kind": "bb84", "seed": 7, "params": {"photons": 4096, "intercept": 1.0},
     "trace_path": "trace.jsonl", "stats_path": "stats.csv"}

Unknown parameters are rejected; every problem is reported with its field name.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .. import algorithms, bb84, cloud, hybrid
from ..crypto import KEY_BITS, generate_rsa_keypair
from ..qsim import MAX_QUBITS
from ..photonics import PhotonTrain, bases_to_string, bits_to_string
from .core import (
    Adversary,
    InterceptionSchedule,
    Message,
    Network,
    TraceRecord,
    trace_digest,
)

KINDS = ("bb84", "hybrid", "cloud", "shor", "grover")

# kind -> {param: (default, validator description, check)}
_POSITIVE_INT = ("a positive integer", lambda v: isinstance(v, int) and not isinstance(v, bool) and v > 0)
_NONNEG_INT = ("a non-negative integer", lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 0)
_PROB = ("a number in [0, 1]", lambda v: isinstance(v, (int, float)) and not isinstance(v, bool) and 0 <= v <= 1)
_OPEN_PROB = ("a number in (0, 1)", lambda v: isinstance(v, (int, float)) and not isinstance(v, bool) and 0 < v < 1)
_OPT_POSITIVE_INT = ("a positive integer or null", lambda v: v is None or _POSITIVE_INT[1](v))
_OPT_NONNEG_INT = ("a non-negative integer or null", lambda v: v is None or _NONNEG_INT[1](v))
_TEXT = ("a string", lambda v: isinstance(v, str))
_OPT_TEXT = ("a string or null", lambda v: v is None or isinstance(v, str))

PARAMS: dict[str, dict[str, tuple[Any, tuple]]] = {
    "bb84": {
        "photons": (1024, _POSITIVE_INT),
        "intercept": (0.0, _PROB),
        "noise": (0.0, _PROB),
        "sample_fraction": (bb84.DEFAULT_SAMPLE_FRACTION, _OPEN_PROB),
        "sample_size": (None, _OPT_POSITIVE_INT),
        "qber_threshold": (bb84.DEFAULT_QBER_THRESHOLD, _OPEN_PROB),
        "min_key_bits": (128, _POSITIVE_INT),
    },
    "hybrid": {
        "photons": (hybrid.DEFAULT_PHOTONS, _POSITIVE_INT),
        "intercept": (0.0, _PROB),
        "attack_rounds": (None, _OPT_NONNEG_INT),
        "noise": (0.0, _PROB),
        "retry_cap": (hybrid.DEFAULT_RETRY_CAP, _NONNEG_INT),
        "payload": ("hi", _TEXT),
        "payload_file": (None, _OPT_TEXT),
    },
    "cloud": {
        "clients": (1, _POSITIVE_INT),
        "services": (2, _POSITIVE_INT),
        "photons": (cloud.DEFAULT_BASE_LENGTH, _POSITIVE_INT),
        "intercept": (0.0, _PROB),
        "attack_until": (None, _OPT_NONNEG_INT),
        "noise": (0.0, _PROB),
        "lifetime": (cloud.TICKET_LIFETIME, _POSITIVE_INT),
        "retry_cap": (cloud.DEFAULT_RETRY_CAP, _NONNEG_INT),
    },
    "shor": {
        "n": (15, _POSITIVE_INT),
        "runs": (1, _POSITIVE_INT),
    },
    "grover": {
        "qubits": (4, _POSITIVE_INT),
        "marked": (0, _NONNEG_INT),
        "iterations": (None, _OPT_NONNEG_INT),
        "runs": (1, _POSITIVE_INT),
    },
}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str
    seed: int
    params: dict[str, Any] = field(default_factory=dict)
    trace_path: str | None = None
    stats_path: str | None = None

    def __post_init__(self) -> None:
        problems = validate(self.kind, self.seed, self.params)
        if problems:
            raise ConfigError(problems)

    @property
    def resolved(self) -> dict[str, Any]:
        defaults = {k: d for k, (d, _) in PARAMS[self.kind].items()}
        defaults.update(self.params)
        return defaults

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "params": dict(self.params),
            "trace_path": self.trace_path,
            "stats_path": self.stats_path,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any], overrides: dict[str, Any] | None = None) -> "ScenarioConfig":
        """Build from a parsed config; ``overrides`` (from CLI flags) win over file values."""
        if not isinstance(data, dict):
            raise ConfigError(["config: must be a JSON object"])
        data = dict(data)
        overrides = dict(overrides or {})
        unknown = sorted(set(data) - {"kind", "seed", "params", "trace_path", "stats_path"})
        if unknown:
            raise ConfigError([f"{k}: unknown top-level field" for k in unknown])
        params = dict(data.get("params") or {})
        params.update(overrides.pop("params", {}) or {})
        for key in ("kind", "seed", "trace_path", "stats_path"):
            if overrides.get(key) is not None:
                data[key] = overrides[key]
        if "kind" not in data:
            raise ConfigError(["kind: required"])
        if "seed" not in data:
            raise ConfigError(["seed: required"])
        return cls(data["kind"], data["seed"], params, data.get("trace_path"), data.get("stats_path"))

    @classmethod
    def from_json(cls, path: str, overrides: dict[str, Any] | None = None) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError([f"config: invalid JSON ({exc})"]) from exc
        return cls.from_dict(data, overrides)


def validate(kind: Any, seed: Any, params: Any) -> list[str]:
    problems = []
    if kind not in KINDS:
        return [f"kind: must be one of {', '.join(KINDS)}, got {kind!r}"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 1 << 64:
        problems.append(f"seed: must be an integer in [0, 2^64), got {seed!r}")
    if not isinstance(params, dict):
        return problems + ["params: must be an object"]
    spec = PARAMS[kind]
    for name, value in sorted(params.items()):
        if name not in spec:
            problems.append(f"params.{name}: unknown parameter for {kind}")
            continue
        desc, check = spec[name][1]
        if not check(value):
            problems.append(f"params.{name}: must be {desc}, got {value!r}")
    if problems:
        return problems
    resolved = {k: d for k, (d, _) in spec.items()} | params
    if kind == "bb84":
        try:
            _bb84_config(resolved)
        except ValueError as exc:
            problems.append(f"params: {exc}")
    if kind == "hybrid" and resolved["photons"] < 8 * KEY_BITS:
        problems.append(f"params.photons: at least {8 * KEY_BITS} for a {KEY_BITS}-bit key")
    if kind == "cloud" and resolved["photons"] < 2 * KEY_BITS:
        problems.append(f"params.photons: at least {2 * KEY_BITS} for a {KEY_BITS}-bit key")
    if kind == "shor":
        n = resolved["n"]
        if n < 4 or n % 2 == 0 or algorithms.is_prime(n) or algorithms.prime_power_base(n) is not None:
            problems.append("params.n: must be an odd composite that is not a prime power")
        elif sum(algorithms.order_finding_registers(n)) > MAX_QUBITS:
            problems.append(f"params.n: needs more than {MAX_QUBITS} simulated qubits")
    if kind == "grover":
        if resolved["qubits"] > 16:
            problems.append("params.qubits: at most 16")
        elif resolved["marked"] >= 1 << resolved["qubits"]:
            problems.append("params.marked: outside the search space")
    return problems


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    transcript: Any
    stats: dict[str, Any]
    trace: list[TraceRecord]
    success: bool
    verdict: str
    accepted_keys: list[Any] = field(default_factory=list)
    adversary: Adversary | None = None

    @property
    def digest(self) -> str:
        return trace_digest(self.trace)


# -- per-kind runners ---------------------------------------------------------------

def _bb84_config(p: dict) -> bb84.Bb84Config:
    return bb84.Bb84Config(
        num_photons=p["photons"],
        sample_fraction=p["sample_fraction"],
        qber_threshold=p["qber_threshold"],
        min_key_bits=p["min_key_bits"],
        sample_size=p["sample_size"],
    )


def _schedule(intercept: float, until: int | None = None) -> InterceptionSchedule:
    if until is None:
        return InterceptionSchedule.constant(intercept)
    if until == 0 or intercept == 0:
        return InterceptionSchedule()
    return InterceptionSchedule([(0.0, float(until), intercept)])


def observe_candidates(adversary: Adversary, positions: np.ndarray, length: int) -> None:
    """Give the adversary its best guess at a key from every train it measured.

    The guess reads the adversary's own measurements at the key positions,
    ``?`` where it saw nothing. Handing it the positions is generous; the
    protocols never reveal them for the hybrid and cloud flows.
    """
    positions = np.asarray(positions, dtype=np.int64)
    for seen in list(adversary.knowledge.bit_strings):
        if len(seen) == length:
            adversary.knowledge.observe_bits("".join(seen[i] for i in positions))


def _run_bb84(cfg: ScenarioConfig, p: dict) -> ScenarioResult:
    config = _bb84_config(p)
    adversary = Adversary()
    net = Network(cfg.seed, adversary, InterceptionSchedule.constant(p["intercept"]), p["noise"])
    rng_a, rng_b = net.rng("alice"), net.rng("bob")
    n = config.num_photons
    alice_bits = rng_a.integers(0, 2, size=n, dtype=np.uint8)
    alice_bases = rng_a.integers(0, 2, size=n, dtype=np.uint8)
    report = net.transmit_photons("alice", "bob", PhotonTrain(alice_bits, alice_bases), "bb84")
    bob_bases = rng_b.integers(0, 2, size=n, dtype=np.uint8)
    bob_bits = net.receive_photons("bob", bob_bases, "bb84")
    net.send(Message("bases", "bob", "alice", {"bases": bases_to_string(bob_bases)}), "bb84")
    net.receive("alice", "bases")
    net.send(Message("bases", "alice", "bob", {"bases": bases_to_string(alice_bases)}), "bb84")
    net.receive("bob", "bases")
    sifted = bb84.sift(alice_bases, bob_bases)
    sample = bb84.choose_sample(sifted, config, rng_a)
    net.send(
        Message("sample", "alice", "bob", {"positions": sample.tolist(), "bits": bits_to_string(alice_bits[sample])}),
        "bb84",
    )
    net.receive("bob", "sample")
    key_indices = np.setdiff1d(sifted, sample, assume_unique=True)
    qber, reason = None, None
    if len(sample):
        qber = bb84.estimate_qber(alice_bits, bob_bits, sample)
        if qber > config.qber_threshold:
            reason = bb84.AbortReason.QBER_EXCEEDED
    if reason is None and (len(sample) == 0 or len(key_indices) < config.min_key_bits):
        reason = bb84.AbortReason.INSUFFICIENT_KEY
    transcript = bb84.Bb84Transcript(
        alice_bits, alice_bases, bob_bases, bob_bits, sifted, sample, qber, reason, key_indices, report
    )
    net.internal("alice", f"verdict:{transcript.verdict}", b"", "bb84")
    keys = []
    if transcript.accepted:
        observe_candidates(adversary, key_indices, n)
        keys.append(transcript.alice_key)
    stats = {
        "photons": n,
        "sifted": len(sifted),
        "sample": len(sample),
        "qber": "" if qber is None else qber,
        "key_bits": len(key_indices) if transcript.accepted else 0,
        "key_mismatches": transcript.key_mismatches,
        "intercepted": report.intercepted,
        "verdict": transcript.verdict,
    }
    return ScenarioResult(cfg, transcript, stats, net.trace, transcript.accepted, transcript.verdict, keys, adversary)


def _payload(p: dict) -> bytes:
    if p["payload_file"]:
        with open(p["payload_file"], "rb") as fh:
            return fh.read()
    return p["payload"].encode("utf-8")


def _run_hybrid(cfg: ScenarioConfig, p: dict) -> ScenarioResult:
    adversary = Adversary()
    if p["attack_rounds"] is None:
        schedule = InterceptionSchedule.constant(p["intercept"])
    else:
        schedule = InterceptionSchedule.first_rounds(p["attack_rounds"], p["intercept"])
    net = Network(cfg.seed, adversary, schedule, p["noise"])
    alice = hybrid.Party("alice", generate_rsa_keypair("alice", net.rng("setup:alice")))
    bob = hybrid.Party("bob", generate_rsa_keypair("bob", net.rng("setup:bob")))
    center = hybrid.QkdCenter(photons=p["photons"])
    center.register(alice)
    center.register(bob)
    session = hybrid.HybridSession(net, center, alice, bob)
    transcript = hybrid.run_hybrid(session, _payload(p), retry_cap=p["retry_cap"])
    verdict = transcript.verdict
    keys = []
    if verdict.delivered:
        active = center.active_for(session.pair)
        observe_candidates(adversary, active.key_positions, p["photons"])
        keys.append(transcript.session_key_bits)
    stats = {
        "verdict": str(verdict),
        "rekeys": verdict.rekeys,
        "rounds": len(transcript.rounds),
        "intercepted": sum(r.intercepted_photons for r in transcript.rounds),
        "messages": net.message_count,
        "delivered_bytes": len(transcript.delivered_payload or b""),
    }
    return ScenarioResult(cfg, transcript, stats, net.trace, verdict.delivered, str(verdict), keys, adversary)


def _run_cloud(cfg: ScenarioConfig, p: dict) -> ScenarioResult:
    adversary = Adversary()
    net = Network(cfg.seed, adversary, _schedule(p["intercept"], p["attack_until"]), p["noise"])
    result = cloud.run_cloud(
        net,
        clients=p["clients"],
        services=p["services"],
        n=p["photons"],
        retry_cap=p["retry_cap"],
        lifetime=p["lifetime"],
    )
    keys = []
    for s in result.sessions:
        if s.delivered:
            record = result.kdc.db.lookup(s.client, s.service)
            client_qb = result.kdc.pending[(s.client, s.service)].bases
            positions = cloud.matching_positions(client_qb, result.kdc.csp_bases[s.service].bases)[: cloud.KEY_BITS]
            observe_candidates(adversary, positions, p["photons"])
            keys.append(s.session_bits)
            keys.append(record.session_key)
    stats = result.summary()
    success = stats["failed"] == 0
    verdict = "Delivered" if success else f"Failed({stats['failed']}/{stats['sessions']})"
    return ScenarioResult(cfg, result, stats, net.trace, success, verdict, keys, adversary)


def _run_shor(cfg: ScenarioConfig, p: dict) -> ScenarioResult:
    net = Network(cfg.seed)
    rng = net.rng("shor")
    results = []
    for run in range(p["runs"]):
        r = algorithms.shor_factor(p["n"], rng)
        results.append(r)
        net.tick()
        net.internal("shor", f"factor:{r.factors[0]}x{r.factors[1]}", json.dumps([r.chosen_a, r.order_r]).encode(), f"run{run}")
    verified = sum(r.factors[0] * r.factors[1] == p["n"] and 1 < r.factors[0] < p["n"] for r in results)
    last = results[-1]
    stats = {
        "n": p["n"],
        "runs": p["runs"],
        "verified": verified,
        "factors": f"{last.factors[0]}x{last.factors[1]}",
        "mean_attempts": float(np.mean([r.attempts for r in results])),
    }
    ok = verified == p["runs"]
    return ScenarioResult(cfg, results, stats, net.trace, ok, f"{last.factors[0]} x {last.factors[1]}")


def _run_grover(cfg: ScenarioConfig, p: dict) -> ScenarioResult:
    net = Network(cfg.seed)
    rng = net.rng("grover")
    size = 1 << p["qubits"]
    k = p["iterations"] if p["iterations"] is not None else algorithms.grover_optimal_iterations(size)
    results = []
    for run in range(p["runs"]):
        r = algorithms.grover_search(p["marked"], p["qubits"], k, rng)
        results.append(r)
        net.tick()
        net.internal("grover", f"measured:{r.measured_index}", b"", f"run{run}")
    found = sum(r.found for r in results)
    stats = {
        "size": size,
        "iterations": k,
        "success_probability": results[-1].success_probability,
        "closed_form": algorithms.grover_success_closed_form(size, k),
        "runs": p["runs"],
        "found": found,
    }
    return ScenarioResult(cfg, results, stats, net.trace, found > 0, f"found {found}/{p['runs']}")


# named (kind, params) cases run by the acceptance suite and the determinism checks
SHIPPED_SUITE: dict[str, tuple[str, dict[str, Any]]] = {
    "bb84-clean": ("bb84", {"photons": 2048}),
    "bb84-noisy": ("bb84", {"photons": 2048, "noise": 0.03}),
    "bb84-light-attack": ("bb84", {"photons": 2048, "intercept": 0.1}),
    "bb84-full-attack": ("bb84", {"photons": 2048, "intercept": 1.0}),
    "hybrid-clean": ("hybrid", {}),
    "hybrid-attack-then-clean": ("hybrid", {"intercept": 1.0, "attack_rounds": 2}),
    "hybrid-partial-attack": ("hybrid", {"intercept": 0.3}),
    "hybrid-persistent-attack": ("hybrid", {"intercept": 1.0}),
    "cloud-sso": ("cloud", {"clients": 2, "services": 2}),
    "cloud-attack-then-clean": ("cloud", {"services": 1, "intercept": 1.0, "attack_until": 20}),
    "cloud-persistent-attack": ("cloud", {"services": 1, "intercept": 1.0}),
    "shor-15": ("shor", {"n": 15}),
    "grover-16": ("grover", {"qubits": 4}),
}


_RUNNERS = {
    "bb84": _run_bb84,
    "hybrid": _run_hybrid,
    "cloud": _run_cloud,
    "shor": _run_shor,
    "grover": _run_grover,
}


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    """Run one scenario and write its trace and stats files if paths are set."""
    result = _RUNNERS[config.kind](config, config.resolved)
    if config.trace_path:
        write_trace(config.trace_path, result.trace)
    if config.stats_path:
        write_csv(config.stats_path, [result.stats])
    return result


# -- output files -------------------------------------------------------------------

def atomic_write(path: str, text: str) -> None:
    """Write to a temp file in the same directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trace(path: str, trace: list[TraceRecord]) -> None:
    atomic_write(path, "".join(r.to_json() + "\n" for r in trace))


def read_trace(path: str) -> list[TraceRecord]:
    with open(path, encoding="utf-8") as fh:
        return [TraceRecord.from_json(line) for line in fh if line.strip()]


def csv_text(rows: list[dict[str, Any]], columns: list[str] | None = None) -> str:
    columns = columns or list(rows[0])
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def write_csv(path: str, rows: list[dict[str, Any]], columns: list[str] | None = None) -> None:
    atomic_write(path, csv_text(rows, columns))
