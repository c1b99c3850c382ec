import json
import socket

import pytest

from qss.net.wire import (
    HEADER,
    Hub,
    MsgType,
    PeerAbort,
    ProtocolViolation,
    TransportError,
    WireMessage,
    connect,
    parse_address,
    read_frame,
)
from qss.roles import Role


def pair(session="abc"):
    a, b = socket.socketpair()
    ha, hb = Hub(Role.SARA, session, timeout=2), Hub(Role.ALICE, session, timeout=2)
    ha.add(Role.ALICE, a)
    hb.add(Role.SARA, b)
    return ha, hb


class TestFraming:
    def test_round_trip(self):
        msg = WireMessage(MsgType.OUTCOME, "s1", Role.CHANNEL_EMULATOR, {"count": 2, "outcome": "01"}, round_id=0)
        frame = msg.encode()
        (length,) = HEADER.unpack(frame[:4])
        assert length == len(frame) - 4
        assert WireMessage.decode(frame[4:]) == msg

    def test_key_order(self):
        body = WireMessage(MsgType.HELLO, "s1", Role.BOB, {"role": "bob"}).encode()[4:]
        assert list(json.loads(body)) == ["type", "session_id", "round_id", "sender", "payload"]
        assert b" " not in body

    def test_round_scoped_needs_round_id(self):
        with pytest.raises(ValueError):
            WireMessage(MsgType.MEASURE_REQUEST, "s1", Role.SARA, {})

    def test_needs_session(self):
        with pytest.raises(ValueError):
            WireMessage(MsgType.HELLO, "", Role.SARA, {})

    @pytest.mark.parametrize("body", [b"not json", b'{"type": "NOPE"}', b'{"type":"HELLO","session_id":"x","round_id":null,"sender":"eve","payload":{}}'])
    def test_malformed(self, body):
        with pytest.raises(ProtocolViolation) as exc:
            WireMessage.decode(body)
        assert exc.value.code == "MALFORMED"

    def test_oversized_frame(self):
        a, b = socket.socketpair()
        a.sendall(HEADER.pack(2**31))
        with pytest.raises(ProtocolViolation):
            read_frame(b)

    def test_parse_address(self):
        assert parse_address("127.0.0.1:9000") == ("127.0.0.1", 9000)
        assert parse_address(":9000") == ("127.0.0.1", 9000)
        with pytest.raises(ValueError):
            parse_address("localhost")


class TestHub:
    def test_send_receive(self):
        ha, hb = pair()
        ha.send(Role.ALICE, MsgType.HELLO, {"x": 1})
        msg = hb.recv(Role.SARA, MsgType.HELLO)
        assert msg.payload == {"x": 1} and msg.sender is Role.SARA
        assert hb.received == [msg]

    def test_unexpected_type(self):
        ha, hb = pair()
        ha.send(Role.ALICE, MsgType.KEEP_LIST, {})
        with pytest.raises(ProtocolViolation) as exc:
            hb.recv(Role.SARA, MsgType.SIFT_ANNOUNCE_PUBLIC)
        assert exc.value.code == "ORDER_VIOLATION"

    def test_abort_raised(self):
        ha, hb = pair()
        ha.broadcast_abort("ORDER_VIOLATION", "testing")
        with pytest.raises(PeerAbort) as exc:
            hb.recv(Role.SARA)
        assert exc.value.code == "ORDER_VIOLATION" and exc.value.sender is Role.SARA

    def test_failed_send_reports_pending_abort(self):
        ha, hb = pair()
        hb.broadcast_abort("ORDER_VIOLATION", "hung up")
        hb.close()
        with pytest.raises(PeerAbort) as exc:
            for _ in range(100):
                ha.send(Role.ALICE, MsgType.HELLO, {"pad": "x" * 4096})
        assert exc.value.code == "ORDER_VIOLATION"

    def test_session_mismatch(self):
        ha, hb = pair()
        hb.session_id = "other"
        ha.send(Role.ALICE, MsgType.HELLO, {})
        with pytest.raises(ProtocolViolation, match="SESSION_MISMATCH"):
            hb.recv(Role.SARA)

    def test_spoofed_sender(self):
        ha, hb = pair()
        spoof = WireMessage(MsgType.HELLO, "abc", Role.BOB, {})
        ha.links[Role.ALICE].sendall(spoof.encode())
        with pytest.raises(ProtocolViolation, match="claims sender"):
            hb.recv(Role.SARA)

    def test_timeout(self):
        _, hb = pair()
        hb.timeout = 0.1
        with pytest.raises(TransportError, match="timed out"):
            hb.recv(Role.SARA)

    def test_closed_link(self):
        ha, hb = pair()
        ha.close()
        with pytest.raises(TransportError):
            hb.recv(Role.SARA)

    def test_connect_gives_up(self):
        with pytest.raises(TransportError):
            connect(("127.0.0.1", 1), timeout=0.2)
