"""Networked four-process session: wire format, party state machines, launchers."""

from .party import (
    EXIT_ABORT,
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_PROTOCOL,
    EXIT_TRANSPORT,
    Participant,
    Phase,
    RoleRun,
    channel_emulator_round,
    run_role,
)
from .runner import run_processes, run_threads
from .wire import Hub, MsgType, PeerAbort, ProtocolViolation, TransportError, WireMessage

__all__ = [
    "EXIT_ABORT", "EXIT_CONFIG", "EXIT_OK", "EXIT_PROTOCOL", "EXIT_TRANSPORT",
    "Hub", "MsgType", "Participant", "PeerAbort", "Phase", "ProtocolViolation", "RoleRun",
    "TransportError", "WireMessage", "channel_emulator_round", "run_processes", "run_role", "run_threads",
]
