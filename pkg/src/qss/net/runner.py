"""Launch all four roles on loopback, as threads or as separate processes."""

from __future__ import annotations

import json
import os
import socket
import subprocess
import sys
import tempfile
import threading
from pathlib import Path

from ..config import SessionConfig
from ..roles import Role
from .party import DIAL_ORDER, RoleRun, run_role

LISTENERS = (Role.CHANNEL_EMULATOR, Role.SARA, Role.ALICE)


def free_ports(count: int) -> list[int]:
    socks = []
    try:
        for _ in range(count):
            s = socket.socket()
            s.bind(("127.0.0.1", 0))
            socks.append(s)
        return [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()


def loopback_addresses() -> dict[Role, tuple[str, int]]:
    return {role: ("127.0.0.1", port) for role, port in zip(LISTENERS, free_ports(len(LISTENERS)))}


def endpoints_for(role: Role, addresses: dict[Role, tuple[str, int]]):
    """(listen address, addresses to dial) for ``role`` in the fixed mesh."""
    idx = DIAL_ORDER.index(role)
    dial = {r: addresses[r] for r in DIAL_ORDER[:idx]}
    return addresses.get(role), dial


def run_threads(config: SessionConfig, announce_delays: dict[Role, float] | None = None) -> dict[Role, RoleRun]:
    """All roles in one process, one thread each, over real loopback sockets."""
    addresses = loopback_addresses()
    delays = announce_delays or {}
    results: dict[Role, RoleRun] = {}

    def work(role: Role) -> None:
        listen_at, dial = endpoints_for(role, addresses)
        results[role] = run_role(role, config, listen_at, dial, announce_delay=delays.get(role, 0.0))

    threads = [threading.Thread(target=work, args=(r,), name=r.value) for r in DIAL_ORDER]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    return results


def run_processes(config: SessionConfig, workdir: str | Path | None = None) -> dict:
    """Spawn one ``qss party`` process per role and collect exit codes and the report.

    Returns ``{"exit_codes": {role: code}, "report": body or None, "stderr": {...}}``.
    """
    tmp = tempfile.TemporaryDirectory() if workdir is None else None
    base = Path(workdir or tmp.name)
    try:
        cfg_path = base / "session.json"
        report_path = base / "report.json"
        # the report path goes on the dealer's command line; a key in the file would override it
        shared = {k: v for k, v in config.to_dict().items() if k != "output"}
        cfg_path.write_text(json.dumps(shared, indent=2) + "\n")
        addresses = loopback_addresses()
        procs = {}
        for role in DIAL_ORDER:
            listen_at, dial = endpoints_for(role, addresses)
            cmd = [sys.executable, "-m", "qss", "party", "--role", role.value, "--config", str(cfg_path)]
            if listen_at:
                cmd += ["--listen", f"{listen_at[0]}:{listen_at[1]}"]
            for peer, addr in dial.items():
                cmd += ["--connect", f"{peer.value}={addr[0]}:{addr[1]}"]
            if role is config.dealer_role:
                cmd += ["--output", str(report_path)]
            procs[role] = subprocess.Popen(
                cmd, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, env=dict(os.environ)
            )
        codes, stderr = {}, {}
        for role, proc in procs.items():
            _, err = proc.communicate(timeout=config.timeout * 4)
            codes[role] = proc.returncode
            stderr[role] = err
        report = None
        if report_path.exists():
            report = json.loads(report_path.read_text())["body"]
        return {"exit_codes": codes, "report": report, "stderr": stderr}
    finally:
        if tmp is not None:
            tmp.cleanup()
