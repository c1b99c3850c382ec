"""Party state machines for the networked session.

Each process plays one role. The channel emulator stands in for the
photons: it alone sees all three settings of a round and hands each party
only its own outcome. Sara, Alice and Bob exchange everything else as
classical messages, so every disclosure appears in someone's received log.
"""

from __future__ import annotations

import hashlib
import json
import socket
import time
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ..channel import ChannelModel, dishonest_report
from ..config import SessionConfig
from ..postprocess import (
    ABORT_NO_KEY,
    FAILED_VERIFY,
    OK,
    CascadeReceiver,
    FinalKeys,
    NoKeyError,
    ReconciliationTranscript,
    ToeplitzSeed,
    amplification_qber,
    bits_to_str,
    combine_bits,
    dealer_parities,
    draw_shuffle_seeds,
    permutation,
    plan_blocks,
    privacy_amplify,
    str_to_bits,
    verification_tag,
)
from ..protocol import (
    ABSENT,
    EstimationError,
    RoundTable,
    Status,
    assemble_batch,
    batches,
    choose_estimation_subsets,
    estimate_qber,
    kept_mask,
    liar_for,
    player_bases,
    rate_report,
    sara_settings,
    sift,
)
from ..rng import stream
from ..roles import PARTICIPANTS, Role, players_for
from ..session import ESTIMATION_FAILED, SessionResult, build_report
from .wire import Hub, MsgType, PeerAbort, ProtocolViolation, TransportError, WireMessage, connect, listen, read_frame

# connection order: each role dials the ones before it and accepts the ones after
DIAL_ORDER = (Role.CHANNEL_EMULATOR, Role.SARA, Role.ALICE, Role.BOB)


class Phase(IntEnum):
    QUANTUM = 0
    ESTIMATION = 1
    SIFTING = 2
    RECONCILE = 3
    AMPLIFY = 4
    DONE = 5
    ABORTED = 6


def _bits(arr) -> str:
    return bits_to_str(np.asarray(arr, dtype=np.uint8))


def _arr(text: str) -> np.ndarray:
    return str_to_bits(text).astype(np.int8)


def _digest(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def peers_of(role: Role) -> tuple[Role, ...]:
    if role is Role.CHANNEL_EMULATOR:
        return PARTICIPANTS
    return tuple(r for r in DIAL_ORDER if r is not role)


def establish(
    role: Role,
    config: SessionConfig,
    listen_address: tuple[str, int] | None,
    connect_to: dict[Role, tuple[str, int]],
) -> Hub:
    """Open and greet every link this role needs."""
    hub = Hub(role, config.session_id, config.timeout)
    peers = peers_of(role)
    idx = DIAL_ORDER.index(role)
    dial = [r for r in peers if DIAL_ORDER.index(r) < idx]
    accept = [r for r in peers if DIAL_ORDER.index(r) > idx]
    hello = {"role": role.value, "config_digest": config.digest()}
    srv = None
    try:
        if accept:
            if listen_address is None:
                raise TransportError(f"{role.value} must listen for {', '.join(r.value for r in accept)}")
            srv = listen(listen_address)
            srv.settimeout(config.timeout)
        for peer in dial:
            if peer not in connect_to:
                raise TransportError(f"no address for {peer.value}")
            sock = connect(connect_to[peer], config.timeout)
            hub.add(peer, sock)
            hub.send(peer, MsgType.HELLO, hello)
            reply = hub.recv(peer, MsgType.HELLO)
            _check_hello(reply, peer, config)
        for _ in accept:
            try:
                sock, _ = srv.accept()
            except socket.timeout:
                raise TransportError(f"{role.value}: peers did not connect in time") from None
            sock.settimeout(config.timeout)
            msg = WireMessage.decode(read_frame(sock))
            peer = msg.sender
            if msg.type is not MsgType.HELLO or peer not in accept or peer in hub.links:
                _refuse(sock, hub, "MALFORMED", f"unexpected greeting from {peer.value}")
            if msg.session_id != config.session_id or msg.payload.get("config_digest") != config.digest():
                _refuse(sock, hub, "CONFIG_MISMATCH", f"{peer.value} runs a different session config")
            hub.add(peer, sock)
            hub.received.append(msg)
            _check_hello(msg, peer, config)
            hub.send(peer, MsgType.HELLO, hello)
    except BaseException:
        hub.close()
        raise
    finally:
        if srv is not None:
            srv.close()
    return hub


def _refuse(sock: socket.socket, hub: Hub, code: str, reason: str) -> None:
    """Tell a greeting peer why it is turned away, then fail this party too."""
    try:
        sock.sendall(hub.message(MsgType.ABORT, {"code": code, "reason": reason}).encode())
    except OSError:
        pass
    sock.close()
    raise ProtocolViolation(code, reason)


def _check_hello(msg: WireMessage, peer: Role, config: SessionConfig) -> None:
    if msg.payload.get("role") != peer.value:
        raise ProtocolViolation("MALFORMED", f"HELLO role mismatch from {peer.value}")
    if msg.payload.get("config_digest") != config.digest():
        raise ProtocolViolation("CONFIG_MISMATCH", f"{peer.value} runs a different session config")


# -- channel emulator ------------------------------------------------------------


def channel_emulator_round(S, s, A, B, model: ChannelModel, rng: np.random.Generator, present=None):
    """Sample one batch and split it into what each party may learn.

    ``present`` marks rounds for which all three settings arrived; the rest
    are discarded for everyone, exactly like a lost photon. The channel
    stream is consumed for the whole batch either way.
    """
    a, b, det_a, det_b = model.measure(S, s, A, B, rng)
    if present is not None:
        det_a = det_a & present
        det_b = det_b & present
    both = det_a & det_b
    coincidence = _bits(both)
    return {
        Role.SARA: {"coincidence": coincidence},
        Role.ALICE: {"coincidence": coincidence, "detected": _bits(det_a), "outcome": _bits(np.where(det_a, a, 0))},
        Role.BOB: {"coincidence": coincidence, "detected": _bits(det_b), "outcome": _bits(np.where(det_b, b, 0))},
    }


def run_emulator(config: SessionConfig, hub: Hub) -> None:
    model = ChannelModel(config.channel, config.adversary_spec)
    rng = stream(config.seed, "channel")
    for start, count in batches(config.rounds):
        req = {}
        for role in PARTICIPANTS:
            msg = hub.recv(role, MsgType.MEASURE_REQUEST)
            if msg.round_id != start or msg.payload.get("count") != count:
                raise ProtocolViolation("ORDER_VIOLATION", f"{role.value} sent batch {msg.round_id}, expected {start}")
            req[role] = msg.payload
        present = np.ones(count, dtype=bool)
        for p in req.values():
            if "present" in p:
                present &= _arr(p["present"]).astype(bool)
        S, s = _arr(req[Role.SARA]["public"]), _arr(req[Role.SARA]["private"])
        A, B = _arr(req[Role.ALICE]["basis"]), _arr(req[Role.BOB]["basis"])
        if not (S.size == s.size == A.size == B.size == count):
            raise ProtocolViolation("MALFORMED", f"batch {start} has settings of the wrong length")
        out = channel_emulator_round(S, s, A, B, model, rng, present)
        for role in PARTICIPANTS:
            hub.send(role, MsgType.OUTCOME, {"count": count, **out[role]}, round_id=start)
    for role in PARTICIPANTS:
        hub.send(role, MsgType.BYE, {})


# -- participants ------------------------------------------------------------------


@dataclass
class PartyOutcome:
    role: Role
    status: str
    report: dict | None = None
    detail: str = ""


class Participant:
    """Sara, Alice or Bob; the dealer additionally drives the classical stage."""

    def __init__(self, role: Role, config: SessionConfig, hub: Hub):
        self.role = role
        self.config = config
        self.hub = hub
        self.dealer = config.dealer_role
        self.p1, self.p2 = players_for(self.dealer)
        self.phase = Phase.QUANTUM
        self.rng = stream(config.seed, role.value)
        # classical draws of the dealer (subsets, shuffles, seeds) use their own stream
        self.dealer_rng = stream(config.seed, "dealer") if role is self.dealer else None
        self.public = self.private = self.detected = self.coincidence = None
        self.announcements: dict[Role, dict] = {}
        # local test hook: seconds to wait before announcing public bits when sifting
        self.announce_delay = 0.0

    # bookkeeping
    def advance(self, phase: Phase) -> None:
        if phase < self.phase:
            raise ProtocolViolation("ORDER_VIOLATION", f"{self.role.value} cannot go from {self.phase.name} to {phase.name}")
        self.phase = phase

    @property
    def is_dealer(self) -> bool:
        return self.role is self.dealer

    @property
    def other_player(self) -> Role:
        return self.p2 if self.role is self.p1 else self.p1

    def run(self) -> PartyOutcome:
        self.quantum_stage()
        if self.is_dealer:
            return self.run_dealer()
        return self.run_player()

    def quantum_stage(self) -> None:
        emu = Role.CHANNEL_EMULATOR
        pub, priv, det, coin = [], [], [], []
        for start, count in batches(self.config.rounds):
            if self.role is Role.SARA:
                S, s = sara_settings(self.rng, count, self.config.basis_bias)
                pub.append(S)
                priv.append(s)
                payload = {"count": count, "public": _bits(S), "private": _bits(s)}
            else:
                X = player_bases(self.rng, count, self.config.basis_bias)
                pub.append(X)
                payload = {"count": count, "basis": _bits(X)}
            self.hub.send(emu, MsgType.MEASURE_REQUEST, payload, round_id=start)
            out = self.hub.recv(emu, MsgType.OUTCOME)
            if out.round_id != start:
                raise ProtocolViolation("ORDER_VIOLATION", f"outcome for batch {out.round_id}, expected {start}")
            coin.append(_arr(out.payload["coincidence"]).astype(bool))
            if self.role is not Role.SARA:
                d = _arr(out.payload["detected"]).astype(bool)
                det.append(d)
                priv.append(np.where(d, _arr(out.payload["outcome"]), ABSENT).astype(np.int8))
        self.hub.recv(emu, MsgType.BYE)
        self.public = np.concatenate(pub)
        self.private = np.concatenate(priv)
        self.detected = np.concatenate(det) if det else None
        self.coincidence = np.concatenate(coin)
        self.raw_ids = np.flatnonzero(self.coincidence).astype(np.int64)

    def audit(self) -> dict:
        d = {"public": _bits(self.public), "private": _bits(np.where(self.private == ABSENT, 0, self.private))}
        if self.detected is not None:
            d["detected"] = _bits(self.detected)
        return d

    # -- dealer ----------------------------------------------------------------

    def run_dealer(self) -> PartyOutcome:
        cfg = self.config
        hub = self.hub
        players = (self.p1, self.p2)
        self.advance(Phase.ESTIMATION)
        try:
            e1, e2 = choose_estimation_subsets(self.raw_ids, cfg.estimation_fraction, self.dealer_rng)
        except EstimationError as exc:
            return self.finish_dealer(ESTIMATION_FAILED, str(exc), None, None, None)
        both = np.union1d(e1, e2)
        for p in players:
            hub.send(p, MsgType.ESTIMATION_REQUEST, {"round_ids": both.tolist()})
        reveals = {}
        for p in players:
            msg = hub.recv(p, MsgType.ESTIMATION_REVEAL)
            pub, priv = _arr(msg.payload["public"]), _arr(msg.payload["private"])
            if pub.size != both.size or priv.size != both.size:
                raise ProtocolViolation("MALFORMED", f"{p.value} revealed {pub.size} rounds, asked {both.size}")
            reveals[p] = (pub, priv)
        reveals[self.role] = (self.public[both], self.private[both])
        counts = []
        for subset in (e1, e2):
            sel = np.isin(both, subset)
            pub = {r: reveals[r][0][sel] for r in PARTICIPANTS}
            priv = {r: reveals[r][1][sel] for r in PARTICIPANTS}
            counts.append(estimate_qber(pub[Role.SARA], pub[Role.ALICE], pub[Role.BOB], priv))
        try:
            rates = rate_report(counts[0][0], counts[0][1], counts[1][0], counts[1][1])
        except EstimationError as exc:
            return self.finish_dealer(ESTIMATION_FAILED, str(exc), None, None, None)
        if rates.abort:
            return self.finish_dealer(ABORT_NO_KEY, "secure key rate is zero", rates, both, None)

        self.advance(Phase.SIFTING)
        remaining = np.setdiff1d(self.raw_ids, both)
        rate_info = {"r1": rates.r1, "r2": rates.r2, "r": rates.r}
        for p in players:
            hub.send(p, MsgType.SIFT_ANNOUNCE_PUBLIC, {"request": True, "rates": rate_info})
        if cfg.fault == "early_reveal":
            # misbehaving dealer: reveals before hearing both players
            for p in players:
                hub.send(p, MsgType.KEEP_LIST, {"public": _bits(self.public[remaining]), "kept": "", "ack": {}})
        for p in players:
            msg = hub.recv(p, MsgType.SIFT_ANNOUNCE_PUBLIC)
            if len(msg.payload.get("public", "")) != remaining.size:
                raise ProtocolViolation("MALFORMED", f"{p.value} announced the wrong number of rounds")
            self.announcements[p] = msg.payload
        pub_all = {self.role: self.public[remaining]}
        for p in players:
            pub_all[p] = _arr(self.announcements[p]["public"])
        keep = kept_mask(pub_all[Role.SARA], pub_all[Role.ALICE], pub_all[Role.BOB])
        if cfg.fault != "early_reveal":
            self.reveal_keep_list(remaining, keep)
        kept_ids = remaining[keep]

        self.advance(Phase.RECONCILE)
        x = self.private[kept_ids].astype(np.uint8)
        if x.size == 0:
            return self.finish_dealer(ABORT_NO_KEY, "no sifted key", rates, both, FinalKeys(ABORT_NO_KEY, 0, detail="no sifted key"))
        sizes = plan_blocks(x.size, rates.qber, cfg.reconciliation_passes)
        seeds = draw_shuffle_seeds(self.dealer_rng, len(sizes))
        transcript = ReconciliationTranscript(x.size, rates.qber, sizes, seeds)
        perms = [permutation(x.size, sd) for sd in seeds]
        hub.send(self.p2, MsgType.SYNDROME, {
            "kind": "plan", "n": int(x.size), "qber_estimate": rates.qber,
            "block_sizes": sizes, "shuffle_seeds": [str(sd) for sd in seeds],
        })
        while True:
            msg = hub.recv(self.p2, MsgType.SYNDROME)
            kind = msg.payload.get("kind")
            if kind == "query":
                queries = [tuple(int(v) for v in q) for q in msg.payload["queries"]]
                for p, lo, hi in queries:
                    if not (0 <= p < len(sizes) and 0 <= lo < hi <= x.size):
                        raise ProtocolViolation("MALFORMED", f"bad parity query {(p, lo, hi)}")
                parities = dealer_parities(x, perms, queries)
                transcript.exchanges.append((queries, parities))
                hub.send(self.p2, MsgType.SYNDROME, {"kind": "parities", "parities": "".join(map(str, parities))})
            elif kind == "done":
                transcript.corrections = int(msg.payload["corrections"])
                break
            else:
                raise ProtocolViolation("MALFORMED", f"unexpected SYNDROME kind {kind!r}")

        self.advance(Phase.AMPLIFY)
        q = amplification_qber(transcript)
        final = FinalKeys(OK, int(x.size), transcript, q)
        try:
            final.dealer_key, final.seed = privacy_amplify(x, transcript.total_leak_bits, q, cfg.security_margin, rng=self.dealer_rng)
        except NoKeyError as exc:
            final.status, final.detail = ABORT_NO_KEY, str(exc)
            return self.finish_dealer(ABORT_NO_KEY, str(exc), rates, both, final)
        seed_payload = {"m": int(final.dealer_key.size), **final.seed.to_dict()}
        for p in players:
            hub.send(p, MsgType.PA_SEED, seed_payload)
        tag_key = self.dealer_rng.bytes(16)
        final.dealer_tag = verification_tag(final.dealer_key, tag_key)
        hub.send(self.p2, MsgType.VERIFY_TAG, {"tag_key": tag_key.hex(), "tag": final.dealer_tag})
        reply = hub.recv(self.p2, MsgType.VERIFY_TAG)
        final.players_tag = reply.payload["tag"]
        if final.players_tag != final.dealer_tag:
            final.status = FAILED_VERIFY
        return self.finish_dealer(final.status, final.detail, rates, both, final)

    def reveal_keep_list(self, remaining: np.ndarray, keep: np.ndarray) -> None:
        """The dealer speaks last: its public bits go out only after both players'."""
        missing = [p.value for p in (self.p1, self.p2) if p not in self.announcements]
        if missing:
            raise ProtocolViolation("ORDER_VIOLATION", f"dealer would reveal before hearing {', '.join(missing)}")
        payload = {
            "public": _bits(self.public[remaining]),
            "kept": _bits(keep),
            "ack": {p.value: _digest(self.announcements[p]) for p in (self.p1, self.p2)},
        }
        for p in (self.p1, self.p2):
            self.hub.send(p, MsgType.KEEP_LIST, payload)

    def finish_dealer(self, status, detail, rates, estimation_ids, final) -> PartyOutcome:
        self.advance(Phase.DONE)
        audits = {self.role: self.audit()}
        for p in (self.p1, self.p2):
            self.hub.send(p, MsgType.BYE, {"status": status, "detail": detail, "audit_request": True})
        for p in (self.p1, self.p2):
            audits[p] = self.hub.recv(p, MsgType.BYE).payload["audit"]
        table = self.rebuild_table(audits, estimation_ids)
        sifted = None
        if rates is not None:
            sifted = sift(table)
            table = sifted.table
        result = SessionResult(self.config, table, sifted, rates, final, status, detail)
        return PartyOutcome(self.role, status, build_report(result), detail)

    def rebuild_table(self, audits: dict, estimation_ids) -> RoundTable:
        """Whole-session table from the post-protocol audit dumps (reporting only)."""
        sara, alice, bob = audits[Role.SARA], audits[Role.ALICE], audits[Role.BOB]
        det_a = _arr(alice["detected"]).astype(bool)
        det_b = _arr(bob["detected"]).astype(bool)
        table = assemble_batch(
            0, _arr(sara["public"]), _arr(sara["private"]), _arr(alice["public"]), _arr(bob["public"]),
            _arr(alice["private"]), _arr(bob["private"]), det_a, det_b,
        )
        if estimation_ids is not None:
            status = table.status.copy()
            status[estimation_ids] = Status.ESTIMATION_SUBSET
            table = table.with_status(status)
        return table

    # -- players -------------------------------------------------------------------

    def run_player(self) -> PartyOutcome:
        cfg = self.config
        hub = self.hub
        d = self.dealer
        adversary = cfg.adversary_spec
        self.advance(Phase.ESTIMATION)
        msg = hub.recv(d, MsgType.ESTIMATION_REQUEST, MsgType.BYE)
        if msg.type is MsgType.BYE:
            return self.finish_player(msg)
        both = np.asarray(msg.payload["round_ids"], dtype=np.int64)
        if not np.all(self.coincidence[both]):
            raise ProtocolViolation("MALFORMED", "estimation request names rounds without a coincidence")
        pub, priv = self.public[both], self.private[both]
        if liar_for(d, adversary) is self.role:
            pub, priv = dishonest_report(pub, priv, adversary, stream(cfg.seed, "adversary"))
        hub.send(d, MsgType.ESTIMATION_REVEAL, {"public": _bits(pub), "private": _bits(priv)})

        msg = hub.recv(d, MsgType.SIFT_ANNOUNCE_PUBLIC, MsgType.BYE)
        if msg.type is MsgType.BYE:
            return self.finish_player(msg)
        self.advance(Phase.SIFTING)
        remaining = np.setdiff1d(self.raw_ids, both)
        mine = {"public": _bits(self.public[remaining])}
        if self.announce_delay:
            time.sleep(self.announce_delay)
        hub.send(d, MsgType.SIFT_ANNOUNCE_PUBLIC, mine)
        hub.send(self.other_player, MsgType.SIFT_ANNOUNCE_PUBLIC, mine)
        theirs = hub.recv(self.other_player, MsgType.SIFT_ANNOUNCE_PUBLIC).payload
        keep_msg = hub.recv(d, MsgType.KEEP_LIST).payload
        ack = keep_msg.get("ack", {})
        if ack.get(self.role.value) != _digest(mine) or ack.get(self.other_player.value) != _digest(theirs):
            raise ProtocolViolation("ORDER_VIOLATION", "dealer revealed its public bits before both players announced")
        pub_all = {self.role: self.public[remaining], self.other_player: _arr(theirs["public"]), d: _arr(keep_msg["public"])}
        keep = kept_mask(pub_all[Role.SARA], pub_all[Role.ALICE], pub_all[Role.BOB])
        if keep_msg.get("kept") != _bits(keep):
            raise ProtocolViolation("PROTOCOL_VIOLATION", "KEEP_LIST disagrees with the announced public bits")
        kept_ids = remaining[keep]

        self.advance(Phase.RECONCILE)
        if self.role is self.p1:
            hub.send(self.p2, MsgType.OUTCOME, {"kept_private": _bits(self.private[kept_ids])}, round_id=0)
            msg = hub.recv(d, MsgType.PA_SEED, MsgType.BYE)
            if msg.type is MsgType.BYE:
                return self.finish_player(msg)
            self.advance(Phase.AMPLIFY)
            return self.finish_player(hub.recv(d, MsgType.BYE))

        p1_bits = _arr(hub.recv(self.p1, MsgType.OUTCOME).payload["kept_private"])
        S = pub_all[Role.SARA][keep]
        A = pub_all[Role.ALICE][keep]
        B = pub_all[Role.BOB][keep]
        y = combine_bits(S, A, B, p1_bits, self.private[kept_ids])
        msg = hub.recv(d, MsgType.SYNDROME, MsgType.BYE)
        if msg.type is MsgType.BYE:
            return self.finish_player(msg)
        plan = msg.payload
        receiver = CascadeReceiver(y, plan["block_sizes"], [int(sd) for sd in plan["shuffle_seeds"]])

        def ask(queries):
            hub.send(d, MsgType.SYNDROME, {"kind": "query", "queries": [list(q) for q in queries]})
            reply = hub.recv(d, MsgType.SYNDROME).payload
            return [int(c) for c in reply["parities"]]

        corrected = receiver.run(ask)
        hub.send(d, MsgType.SYNDROME, {"kind": "done", "corrections": receiver.flips})
        msg = hub.recv(d, MsgType.PA_SEED, MsgType.BYE)
        if msg.type is MsgType.BYE:
            return self.finish_player(msg)
        self.advance(Phase.AMPLIFY)
        seed = ToeplitzSeed.from_dict(msg.payload)
        key = seed.hash(corrected)
        tag_msg = hub.recv(d, MsgType.VERIFY_TAG).payload
        tag = verification_tag(key, bytes.fromhex(tag_msg["tag_key"]))
        hub.send(d, MsgType.VERIFY_TAG, {"tag": tag, "match": tag == tag_msg["tag"]})
        self.final_key = key
        return self.finish_player(hub.recv(d, MsgType.BYE))

    def finish_player(self, bye: WireMessage) -> PartyOutcome:
        self.advance(Phase.DONE)
        self.hub.send(self.dealer, MsgType.BYE, {"audit": self.audit()})
        return PartyOutcome(self.role, bye.payload.get("status", OK), None, bye.payload.get("detail", ""))


# -- running one role ------------------------------------------------------------

EXIT_OK = 0
EXIT_ABORT = 2
EXIT_TRANSPORT = 3
EXIT_PROTOCOL = 4
EXIT_CONFIG = 5


def exit_code_for(status: str) -> int:
    return EXIT_OK if status == OK else EXIT_ABORT


@dataclass
class RoleRun:
    """What one process ends with: status, exit code, and the dealer's report."""

    role: Role
    exit_code: int
    status: str
    detail: str = ""
    report: dict | None = None
    received: list = None
    sent: list = None
    events: list = None


def run_role(
    role: Role,
    config: SessionConfig,
    listen_address: tuple[str, int] | None = None,
    connect_to: dict[Role, tuple[str, int]] | None = None,
    *,
    announce_delay: float = 0.0,
) -> RoleRun:
    """Connect, play ``role`` to the end, and map failures to exit classes.

    A local failure is broadcast as ABORT so the other parties stop too.
    """
    hub = None
    try:
        hub = establish(role, config, listen_address, connect_to or {})
        if role is Role.CHANNEL_EMULATOR:
            run_emulator(config, hub)
            out = PartyOutcome(role, OK)
        else:
            party = Participant(role, config, hub)
            party.announce_delay = announce_delay
            out = party.run()
        return RoleRun(role, exit_code_for(out.status), out.status, out.detail, out.report, hub.received, hub.sent, hub.events)
    except PeerAbort as exc:
        code = EXIT_TRANSPORT if exc.code == "TRANSPORT" else EXIT_PROTOCOL
        return _failed(role, hub, code, exc.code, str(exc), (exc.code, exc.reason))
    except ProtocolViolation as exc:
        return _failed(role, hub, EXIT_PROTOCOL, exc.code, str(exc), (exc.code, exc.reason))
    except (TransportError, OSError) as exc:
        return _failed(role, hub, EXIT_TRANSPORT, "TRANSPORT", str(exc), ("TRANSPORT", str(exc)))
    finally:
        if hub is not None:
            hub.close()


def _failed(role, hub, exit_code, status, detail, abort: tuple[str, str]) -> RoleRun:
    if hub is not None:
        hub.broadcast_abort(*abort)
    if hub is None:
        return RoleRun(role, exit_code, status, detail, None, [], [], [])
    return RoleRun(role, exit_code, status, detail, None, hub.received, hub.sent, hub.events)
