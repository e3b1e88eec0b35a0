"""Deterministic network harness and scenario runner."""

from .core import (
    SLOT_SECONDS,
    Adversary,
    AdversaryKnowledge,
    ChannelKind,
    InterceptionSchedule,
    Message,
    Network,
    TraceRecord,
    audit_db_writers,
    audit_monotone_time,
    audit_no_cloning,
    derive_stream_seed,
    knowledge_contains_key,
    payload_digest,
    stream,
    tap_classical,
    trace_digest,
)

_SCENARIO_NAMES = {"ConfigError", "ScenarioConfig", "ScenarioResult", "run_scenario"}


def __getattr__(name):
    # the scenario runner imports the protocol modules, which import core
    if name in _SCENARIO_NAMES:
        from . import scenario

        return getattr(scenario, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")

__all__ = [
    "SLOT_SECONDS",
    "Adversary",
    "AdversaryKnowledge",
    "ChannelKind",
    "ConfigError",
    "InterceptionSchedule",
    "Message",
    "Network",
    "ScenarioConfig",
    "ScenarioResult",
    "TraceRecord",
    "audit_db_writers",
    "audit_monotone_time",
    "audit_no_cloning",
    "derive_stream_seed",
    "knowledge_contains_key",
    "payload_digest",
    "run_scenario",
    "stream",
    "tap_classical",
    "trace_digest",
]
