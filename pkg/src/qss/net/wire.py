"""Length-prefixed JSON framing and blocking links between parties.

A frame is a 4-byte big-endian body length followed by one UTF-8 JSON
object with keys, in order: type, session_id, round_id, sender, payload.
See docs/wire.md for the payload of each message type.
"""

from __future__ import annotations

import json
import select
import socket
import struct
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from ..roles import Role

HEADER = struct.Struct(">I")
MAX_MESSAGE_SIZE = 64 * 1024 * 1024


class MsgType(Enum):
    HELLO = "HELLO"
    MEASURE_REQUEST = "MEASURE_REQUEST"
    OUTCOME = "OUTCOME"
    SIFT_ANNOUNCE_PUBLIC = "SIFT_ANNOUNCE_PUBLIC"
    KEEP_LIST = "KEEP_LIST"
    ESTIMATION_REQUEST = "ESTIMATION_REQUEST"
    ESTIMATION_REVEAL = "ESTIMATION_REVEAL"
    SYNDROME = "SYNDROME"
    PA_SEED = "PA_SEED"
    VERIFY_TAG = "VERIFY_TAG"
    ABORT = "ABORT"
    BYE = "BYE"


ROUND_SCOPED = (MsgType.MEASURE_REQUEST, MsgType.OUTCOME)


class TransportError(ConnectionError):
    pass


class ProtocolViolation(RuntimeError):
    """A peer (or this party) broke the message order or content rules."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.reason = message


class PeerAbort(RuntimeError):
    def __init__(self, sender: Role, code: str, reason: str):
        super().__init__(f"{sender.value} aborted the session: {code}: {reason}")
        self.sender = sender
        self.code = code
        self.reason = reason


@dataclass(frozen=True)
class WireMessage:
    type: MsgType
    session_id: str
    sender: Role
    payload: dict = field(default_factory=dict)
    round_id: int | None = None

    def __post_init__(self) -> None:
        if not self.session_id:
            raise ValueError("every message carries a session_id")
        if self.type in ROUND_SCOPED and self.round_id is None:
            raise ValueError(f"{self.type.value} must carry a round_id")

    def encode(self) -> bytes:
        body = json.dumps(
            {
                "type": self.type.value,
                "session_id": self.session_id,
                "round_id": self.round_id,
                "sender": self.sender.value,
                "payload": self.payload,
            },
            separators=(",", ":"),
        ).encode()
        if len(body) > MAX_MESSAGE_SIZE:
            raise ValueError(f"message of {len(body)} bytes exceeds the frame limit")
        return HEADER.pack(len(body)) + body

    @classmethod
    def decode(cls, body: bytes) -> "WireMessage":
        try:
            d = json.loads(body)
            return cls(
                type=MsgType(d["type"]),
                session_id=d["session_id"],
                round_id=d["round_id"],
                sender=Role(d["sender"]),
                payload=d["payload"],
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ProtocolViolation("MALFORMED", f"undecodable message: {exc}") from None

    def canonical_key(self) -> tuple:
        return (-1 if self.round_id is None else self.round_id, self.type.value, self.sender.value)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 20))
        if not chunk:
            raise TransportError("connection closed by peer")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> bytes:
    (length,) = HEADER.unpack(_recv_exact(sock, HEADER.size))
    if length > MAX_MESSAGE_SIZE:
        raise ProtocolViolation("MALFORMED", f"frame of {length} bytes is too large")
    return _recv_exact(sock, length)


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address {text!r} is not host:port")
    return host or "127.0.0.1", int(port)


class Hub:
    """All of one party's links, read through a single select loop.

    ``recv`` waits for a message from a particular peer but buffers whatever
    else arrives; an ABORT from any peer is raised immediately.
    """

    def __init__(self, role: Role, session_id: str, timeout: float = 30.0):
        self.role = role
        self.session_id = session_id
        self.timeout = timeout
        self.links: dict[Role, socket.socket] = {}
        self.inbox: dict[Role, deque] = {}
        self.closed: set[Role] = set()
        self.received: list[WireMessage] = []
        self.sent: list[tuple[Role, WireMessage]] = []
        # ("in" | "out", peer, message) in the order this party saw them
        self.events: list[tuple[str, Role, WireMessage]] = []

    def add(self, peer: Role, sock: socket.socket) -> None:
        if sock.family in (socket.AF_INET, socket.AF_INET6):
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.settimeout(self.timeout)
        self.links[peer] = sock
        self.inbox[peer] = deque()

    def message(self, type: MsgType, payload: dict | None = None, round_id: int | None = None) -> WireMessage:
        return WireMessage(type, self.session_id, self.role, payload or {}, round_id)

    def send(self, peer: Role, type: MsgType, payload: dict | None = None, round_id: int | None = None) -> WireMessage:
        msg = self.message(type, payload, round_id)
        if peer in self.closed or peer not in self.links:
            raise TransportError(f"no open link to {peer.value}")
        try:
            self.links[peer].sendall(msg.encode())
        except OSError as exc:
            # the peer may have aborted and hung up just before this send
            self._raise_pending_abort(peer)
            raise TransportError(f"send to {peer.value} failed: {exc}") from None
        self.sent.append((peer, msg))
        self.events.append(("out", peer, msg))
        return msg

    def _raise_pending_abort(self, peer: Role) -> None:
        """Read what ``peer`` left in the socket; raise PeerAbort if it is an ABORT."""
        sock = self.links[peer]
        try:
            while select.select([sock], [], [], 0.1)[0]:
                msg = WireMessage.decode(read_frame(sock))
                if msg.type is MsgType.ABORT:
                    self.received.append(msg)
                    self.events.append(("in", peer, msg))
                    raise PeerAbort(peer, msg.payload.get("code", "ABORT"), msg.payload.get("reason", ""))
        except (OSError, TransportError, ProtocolViolation, ValueError):
            pass

    def _pump(self, deadline: float) -> None:
        live = [s for r, s in self.links.items() if r not in self.closed]
        if not live:
            raise TransportError("all links closed")
        wait = deadline - time.monotonic()
        if wait <= 0:
            raise TransportError("timed out waiting for a message")
        ready, _, _ = select.select(live, [], [], wait)
        for sock in ready:
            peer = next(r for r, s in self.links.items() if s is sock)
            try:
                msg = WireMessage.decode(read_frame(sock))
            except TransportError:
                self.closed.add(peer)
                continue
            except socket.timeout:
                raise TransportError(f"partial frame from {peer.value}") from None
            if msg.sender is not peer:
                raise ProtocolViolation("MALFORMED", f"message on the {peer.value} link claims sender {msg.sender.value}")
            # an ABORT is honoured even across a session mismatch: it may be the reason for it
            if msg.type is MsgType.ABORT:
                self.received.append(msg)
                self.events.append(("in", peer, msg))
                raise PeerAbort(peer, msg.payload.get("code", "ABORT"), msg.payload.get("reason", ""))
            if msg.session_id != self.session_id:
                raise ProtocolViolation("SESSION_MISMATCH", f"{peer.value} sent session {msg.session_id}")
            self.received.append(msg)
            self.events.append(("in", peer, msg))
            self.inbox[peer].append(msg)

    def recv(self, peer: Role, *types: MsgType) -> WireMessage:
        deadline = time.monotonic() + self.timeout
        while True:
            if self.inbox[peer]:
                msg = self.inbox[peer].popleft()
                if types and msg.type not in types:
                    want = "/".join(t.value for t in types)
                    raise ProtocolViolation(
                        "ORDER_VIOLATION", f"expected {want} from {peer.value}, got {msg.type.value}"
                    )
                return msg
            if peer in self.closed:
                raise TransportError(f"{peer.value} closed the connection")
            self._pump(deadline)

    def broadcast_abort(self, code: str, reason: str) -> None:
        for peer in list(self.links):
            if peer in self.closed:
                continue
            try:
                self.send(peer, MsgType.ABORT, {"code": code, "reason": reason})
            except (TransportError, PeerAbort):
                pass

    def close(self) -> None:
        for sock in self.links.values():
            try:
                sock.close()
            except OSError:
                pass


def connect(address: tuple[str, int], timeout: float) -> socket.socket:
    """Dial with retries until ``timeout``; peers may start in any order."""
    deadline = time.monotonic() + timeout
    while True:
        try:
            return socket.create_connection(address, timeout=min(5.0, timeout))
        except OSError as exc:
            if time.monotonic() >= deadline:
                raise TransportError(f"cannot reach {address[0]}:{address[1]}: {exc}") from None
            time.sleep(0.05)


def listen(address: tuple[str, int]) -> socket.socket:
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        srv.bind(address)
    except OSError as exc:
        srv.close()
        raise TransportError(f"cannot listen on {address[0]}:{address[1]}: {exc}") from None
    srv.listen(8)
    return srv
