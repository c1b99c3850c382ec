"""Command-line entry points: simulate, party, loopback, analyze."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import reference
from .config import FAULTS, ConfigError, SessionConfig
from .net.party import EXIT_ABORT, EXIT_CONFIG, EXIT_OK, EXIT_TRANSPORT, exit_code_for, run_role
from .net.wire import parse_address
from .roles import Role
from .session import ReportSchemaError, load_report, simulate_session, write_report

# flag name -> SessionConfig field
_FLAG_FIELDS = {
    "rounds": "rounds",
    "seed": "seed",
    "visibility": "visibility",
    "loss_a": "loss_a",
    "loss_b": "loss_b",
    "adversary": "adversary",
    "lie_probability": "lie_probability",
    "dishonest_player": "dishonest_player",
    "dealer": "dealer",
    "estimation_fraction": "estimation_fraction",
    "security_margin": "security_margin",
    "passes": "reconciliation_passes",
    "basis_bias": "basis_bias",
    "audit": "audit",
    "output": "output",
    "fault": "fault",
    "timeout": "timeout",
}


def _session_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("session")
    g.add_argument("--config", help="JSON session config; its keys override the flags below")
    g.add_argument("--rounds", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--visibility", type=float)
    g.add_argument("--loss-a", type=float)
    g.add_argument("--loss-b", type=float)
    g.add_argument("--adversary", choices=["none", "intercept_resend_a", "intercept_resend_b", "dishonest_player_lies"])
    g.add_argument("--lie-probability", type=float)
    g.add_argument("--dishonest-player", choices=["sara", "alice", "bob"])
    g.add_argument("--dealer", choices=["sara", "alice", "bob"])
    g.add_argument("--estimation-fraction", type=float)
    g.add_argument("--security-margin", type=int)
    g.add_argument("--passes", type=int, help="reconciliation passes")
    g.add_argument("--basis-bias", type=float)
    g.add_argument("--audit", action="store_true", default=None, help="include transcript and seed in the report")
    g.add_argument("--output", help="report path")
    g.add_argument("--fault", choices=list(FAULTS))
    g.add_argument("--timeout", type=float, help="per-message timeout in seconds")


def build_config(args: argparse.Namespace) -> SessionConfig:
    data = {field: getattr(args, flag) for flag, field in _FLAG_FIELDS.items() if getattr(args, flag, None) is not None}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"{args.config}: {exc.strerror}") from None
        try:
            file_data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        if not isinstance(file_data, dict):
            raise ConfigError(f"{args.config}: config must be a JSON object")
        data.update(file_data)
    return SessionConfig.from_dict(data)


def _fmt(x, spec: str) -> str:
    return "EMPTY" if x is None else format(x, spec)


def format_table(body: dict) -> str:
    lines = [
        f"{'public bits':<14} {'ideal':>5} {'<eps>':>8} {'+/-':>7} {'QBER %':>7} {'+/-':>6} {'n':>7}",
    ]
    for row in body["table"]:
        qber = None if row["qber"] is None else 100 * row["qber"]
        qerr = None if row["qber_stderr"] is None else 100 * row["qber_stderr"]
        lines.append(
            f"{row['public_bits']:<14} {row['ideal_eps']:>+5d} {_fmt(row['eps'], '+8.3f')} "
            f"{_fmt(row['eps_stderr'], '7.3f')} {_fmt(qber, '7.2f') if row['kept'] else '      -'} "
            f"{_fmt(qerr, '6.2f') if row['kept'] else '     -'} {row['n']:>7d}"
        )
    r = body["rounds"]
    lines.append(f"sift fraction: {_fmt(r['sift_fraction'], '.4f')} ({r['kept']} kept of {r['sift_candidates']})")
    est = body["estimation"]
    if est is not None:
        lines.append(
            f"Q1 = {est['q1']:.4f}  Q2 = {est['q2']:.4f}  R1 = {est['r1']:.4f}  R2 = {est['r2']:.4f}  "
            f"R = {est['r']:.4f}  abort = {est['abort']}"
        )
    pp = body["post_processing"]
    if pp is not None:
        lines.append(
            f"sifted key {pp['sifted_key_length']} bits, leak {pp['leak_bits']}, "
            f"final key {pp['final_key_length']} bits, keys match = {pp['keys_match']}"
        )
    lines.append(f"status: {body['status']}" + (f" ({body['detail']})" if body["detail"] else ""))
    return "\n".join(lines)


def cmd_simulate(args) -> int:
    config = build_config(args)
    result = simulate_session(config)
    body = result.report
    print(format_table(body))
    if config.output:
        write_report(body, config.output)
    return exit_code_for(result.status)


def _parse_connect(items: list[str]) -> dict[Role, tuple[str, int]]:
    out = {}
    for item in items or []:
        role, sep, addr = item.partition("=")
        if not sep:
            raise ConfigError(f"--connect expects role=host:port, got {item!r}")
        try:
            out[Role.parse(role)] = parse_address(addr)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return out


def cmd_party(args) -> int:
    config = build_config(args)
    try:
        role = Role.parse(args.role)
        listen_at = parse_address(args.listen) if args.listen else None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    run = run_role(role, config, listen_at, _parse_connect(args.connect))
    if args.log:
        with open(args.log, "w") as fh:
            for msg in run.received:
                fh.write(msg.encode()[4:].decode() + "\n")
    if run.exit_code not in (EXIT_OK, EXIT_ABORT):
        print(f"{role.value}: {run.status}: {run.detail}", file=sys.stderr)
    elif run.report is not None:
        print(format_table(run.report))
        if config.output:
            write_report(run.report, config.output)
    else:
        print(f"{role.value}: {run.status}")
    return run.exit_code


def cmd_loopback(args) -> int:
    from .net.runner import run_processes

    config = build_config(args)
    out = run_processes(config)
    for role, code in out["exit_codes"].items():
        print(f"{role.value:<8} exit {code}")
        if out["stderr"][role].strip():
            print("  " + out["stderr"][role].strip().replace("\n", "\n  "))
    if out["report"] is None:
        return max(out["exit_codes"].values()) or EXIT_TRANSPORT
    print(format_table(out["report"]))
    if config.output:
        write_report(out["report"], config.output)
    return out["exit_codes"][config.dealer_role]


def analyze_rows(body: dict) -> list[dict]:
    """Deltas of each kept row against the ideal and the published values."""
    rows = []
    for row in body["table"]:
        ref = reference.PUBLISHED.get(row["public_bits"])
        if ref is None:
            continue
        eps, qber = row["eps"], row["qber"]
        rows.append({
            "public_bits": row["public_bits"],
            "eps": eps,
            "delta_ideal": None if eps is None else abs(eps - ref["ideal"]),
            "delta_published": None if eps is None else abs(abs(eps) - abs(ref["eps"])),
            "qber_percent": None if qber is None else 100 * qber,
            "delta_qber_percent": None if qber is None else 100 * qber - ref["qber"],
        })
    return rows


def cmd_analyze(args) -> int:
    status = EXIT_OK
    for path in args.reports:
        try:
            body = load_report(path)
        except (ReportSchemaError, OSError) as exc:
            print(f"schema error: {exc}", file=sys.stderr)
            status = EXIT_CONFIG
            continue
        print(f"{path}  (seed {body['config']['seed']}, V = {body['config']['visibility']})")
        print(f"{'public bits':<14} {'<eps>':>8} {'|d ideal|':>10} {'|d meas|':>9} {'QBER %':>7} {'d QBER':>7}")
        for r in analyze_rows(body):
            print(
                f"{r['public_bits']:<14} {_fmt(r['eps'], '+8.3f')} {_fmt(r['delta_ideal'], '10.3f')} "
                f"{_fmt(r['delta_published'], '9.3f')} {_fmt(r['qber_percent'], '7.2f')} "
                f"{_fmt(r['delta_qber_percent'], '+7.2f')}"
            )
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qss", description="Three-party quantum secret sharing simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a whole session in this process")
    _session_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("party", help="play one role of a networked session")
    _session_flags(p)
    p.add_argument("--role", required=True, choices=[r.value for r in Role])
    p.add_argument("--listen", help="host:port to accept later peers on")
    p.add_argument("--connect", action="append", metavar="ROLE=HOST:PORT", help="address of an earlier peer")
    p.add_argument("--log", help="write every received message as one JSON line")
    p.set_defaults(func=cmd_party)

    p = sub.add_parser("loopback", help="spawn all four roles on localhost")
    _session_flags(p)
    p.set_defaults(func=cmd_loopback)

    p = sub.add_parser("analyze", help="compare reports with the published table")
    p.add_argument("reports", nargs="+")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
