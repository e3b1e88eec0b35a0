"""Command-line entry point: ``qcloudsim <subcommand> [flags]``.

Exit codes: 0 success verdict, 1 protocol failure verdict, 2 usage or config error.
Scenario flags mirror the ``params`` names of the JSON config (dashes for
underscores); flags win over ``--config`` values, and ``QCLOUDSIM_SEED``
supplies a seed when neither gives one.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import algorithms
from .crypto import CryptoError, rsa_decrypt, rsa_encrypt, rsa_keygen
from .netsim.core import derive_stream_seed
from .netsim.scenario import ConfigError, ScenarioConfig, csv_text, run_scenario, write_csv

SEED_ENV = "QCLOUDSIM_SEED"

SWEEP_COLUMNS = ["p", "sample_size", "qber_mean", "abort_rate", "detection_rate", "runs"]

REPORT = """\
Cryptosystems broken by Shor's algorithm
  System                                 Hard problem
{rows}

Grover against symmetric keys
  AES-256 brute force: about 2^255 guesses on average.
  With Grover's search: about 2^128 quantum iterations.
  Doubling the key length restores the classical margin.
"""


class UsageError(Exception):
    pass


def _scenario_flags(parser: argparse.ArgumentParser, spec: list[tuple[str, type]]) -> None:
    parser.add_argument("--seed", type=int, help="master seed (default: $%s)" % SEED_ENV)
    parser.add_argument("--config", help="JSON scenario config; flags override its values")
    parser.add_argument("--trace", dest="trace_path", help="write the JSON-lines trace here")
    parser.add_argument("--stats", dest="stats_path", help="write a one-row stats CSV here")
    for name, kind in spec:
        parser.add_argument("--" + name.replace("_", "-"), dest="p_" + name, type=kind, default=None)


SCENARIO_FLAGS = {
    "bb84": [
        ("photons", int),
        ("intercept", float),
        ("noise", float),
        ("sample_fraction", float),
        ("sample_size", int),
        ("qber_threshold", float),
        ("min_key_bits", int),
    ],
    "hybrid": [
        ("photons", int),
        ("intercept", float),
        ("attack_rounds", int),
        ("noise", float),
        ("retry_cap", int),
        ("payload", str),
        ("payload_file", str),
    ],
    "cloud": [
        ("clients", int),
        ("services", int),
        ("photons", int),
        ("intercept", float),
        ("attack_until", int),
        ("noise", float),
        ("lifetime", int),
        ("retry_cap", int),
    ],
    "shor": [("n", int), ("runs", int)],
    "grover": [("qubits", int), ("marked", int), ("iterations", int), ("runs", int)],
}


def parse_values(text: str, kind: type = float) -> list:
    """``"0,0.5,1"`` lists values; ``"start:stop:step"`` is an inclusive range."""
    text = text.strip()
    if not text:
        raise UsageError("empty range")
    try:
        if ":" in text:
            parts = [kind(x) for x in text.split(":")]
            if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
                raise UsageError(f"malformed range {text!r}; expected start:stop:step")
            start, stop, step = parts
            count = int(np.floor((stop - start) / step + 1e-9)) + 1
            values = [kind(round(start + i * step, 12)) for i in range(count)]
        else:
            values = [kind(x) for x in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"malformed range {text!r}") from exc
    if not values:
        raise UsageError("empty range")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcloudsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for kind, spec in SCENARIO_FLAGS.items():
        _scenario_flags(sub.add_parser(kind, help=f"run a {kind} scenario"), spec)

    rsa = sub.add_parser("rsa", help="textbook RSA keygen and roundtrip")
    rsa.add_argument("--p", type=int, default=61)
    rsa.add_argument("--q", type=int, default=53)
    rsa.add_argument("--e", type=int, default=17)
    rsa.add_argument("--message", type=int, default=65)

    sweep = sub.add_parser("sweep", help="BB84 grid over interception probability and sample size")
    sweep.add_argument("--p-values", default="0,0.5,1.0", help="list a,b,c or range start:stop:step")
    sweep.add_argument("--sample-sizes", default=None, help="list or range of disclosed sample sizes")
    sweep.add_argument("--runs", type=int, default=200)
    sweep.add_argument("--photons", type=int, default=4096)
    sweep.add_argument("--qber-threshold", type=float, default=None)
    sweep.add_argument("--min-key-bits", type=int, default=None)
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--out", help="CSV path (default: stdout)")

    sub.add_parser("report", help="print static context tables")
    return parser


def _seed(args, config_seed=None) -> int | None:
    if args.seed is not None:
        return args.seed
    if config_seed is not None:
        return config_seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError([f"{SEED_ENV}: not an integer ({env!r})"]) from exc
    return None


def config_from_args(args) -> ScenarioConfig:
    params = {
        key[2:]: value for key, value in vars(args).items() if key.startswith("p_") and value is not None
    }
    overrides = {"kind": args.command, "params": params, "trace_path": args.trace_path, "stats_path": args.stats_path}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"config: {exc}"]) from exc
        if isinstance(data, dict) and data.get("kind", args.command) != args.command:
            raise ConfigError([f"kind: config is for {data['kind']!r}, not {args.command!r}"])
        overrides["seed"] = _seed(args, data.get("seed") if isinstance(data, dict) else None)
        return ScenarioConfig.from_dict(data, overrides)
    overrides["seed"] = _seed(args)
    return ScenarioConfig.from_dict({}, overrides)


def _summary(result) -> str:
    cfg, s = result.config, result.stats
    if cfg.kind == "bb84":
        qber = "n/a" if s["qber"] == "" else f"{s['qber']:.4f}"
        return (
            f"bb84 seed {cfg.seed}: {s['photons']} photons, {s['sifted']} sifted, "
            f"{s['sample']} disclosed, qber {qber}, intercepted {s['intercepted']}; "
            f"verdict {result.verdict} with {s['key_bits']} key bits."
        )
    if cfg.kind == "hybrid":
        return (
            f"hybrid seed {cfg.seed}: {s['rounds']} key round(s), {s['intercepted']} photons intercepted, "
            f"{s['messages']} messages; verdict {result.verdict}."
        )
    if cfg.kind == "cloud":
        return (
            f"cloud seed {cfg.seed}: {s['sessions']} session(s), {s['delivered']} delivered, "
            f"{s['rekeys']} restart(s), {s['failed']} failed, {s['mean_handshake_msgs']:.1f} messages per session."
        )
    if cfg.kind == "shor":
        a, b = s["factors"].split("x")
        return f"shor seed {cfg.seed}: factors of {s['n']} are {a} x {b} ({s['verified']}/{s['runs']} runs verified)."
    return (
        f"grover seed {cfg.seed}: N={s['size']}, {s['iterations']} iteration(s), success probability "
        f"{s['success_probability']:.6f}, marked item found in {s['found']}/{s['runs']} runs."
    )


def cmd_scenario(args) -> int:
    config = config_from_args(args)
    result = run_scenario(config)
    print(_summary(result))
    return 0 if result.success else 1


def cmd_rsa(args) -> int:
    try:
        pair = rsa_keygen(args.p, args.q, args.e)
        c = rsa_encrypt(args.message, pair)
        m = rsa_decrypt(c, pair)
    except (CryptoError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    print(f"rsa: n={pair.modulus} e={pair.public_exponent} d={pair.private_exponent}; m={args.message} -> c={c} -> m={m}.")
    return 0 if m == args.message else 1


def sweep_rows(
    p_values: list[float],
    sample_sizes: list[int] | None,
    runs: int,
    photons: int,
    seed: int,
    qber_threshold: float | None = None,
    min_key_bits: int | None = None,
) -> list[dict]:
    if runs < 1:
        raise UsageError("runs must be positive")
    rows = []
    for p in p_values:
        for k in sample_sizes or [None]:
            params = {"photons": photons, "intercept": p}
            if k is not None:
                params["sample_size"] = k
            if qber_threshold is not None:
                params["qber_threshold"] = qber_threshold
            if min_key_bits is not None:
                params["min_key_bits"] = min_key_bits
            qbers, aborts, detections = [], 0, 0
            for i in range(runs):
                cfg = ScenarioConfig("bb84", derive_stream_seed(seed, f"sweep:{i}"), params)
                result = run_scenario(cfg)
                t = result.transcript
                if t.qber is not None:
                    qbers.append(t.qber)
                aborts += not t.accepted
                detections += t.sample_mismatches > 0
            rows.append(
                {
                    "p": p,
                    "sample_size": "" if k is None else k,
                    "qber_mean": float(np.mean(qbers)) if qbers else "",
                    "abort_rate": aborts / runs,
                    "detection_rate": detections / runs,
                    "runs": runs,
                }
            )
    return rows


def cmd_sweep(args) -> int:
    seed = _seed(args)
    if seed is None:
        seed = 0
    p_values = parse_values(args.p_values, float)
    if any(not 0 <= p <= 1 for p in p_values):
        raise UsageError("interception probabilities must lie in [0, 1]")
    sizes = parse_values(args.sample_sizes, int) if args.sample_sizes is not None else None
    rows = sweep_rows(p_values, sizes, args.runs, args.photons, seed, args.qber_threshold, args.min_key_bits)
    if args.out:
        write_csv(args.out, rows, SWEEP_COLUMNS)
        print(f"sweep: {len(rows)} row(s) written to {args.out}.")
    else:
        sys.stdout.write(csv_text(rows, SWEEP_COLUMNS))
    return 0


def report_text() -> str:
    rows = "\n".join(f"  {system:<38} {problem}" for system, problem in algorithms.broken_systems_report())
    return REPORT.format(rows=rows)


def cmd_report(args) -> int:
    sys.stdout.write(report_text())
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {"rsa": cmd_rsa, "sweep": cmd_sweep, "report": cmd_report}
    try:
        return handlers.get(args.command, cmd_scenario)(args)
    except (ConfigError, UsageError) as exc:
        print(f"qcloudsim {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
