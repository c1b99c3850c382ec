import threading

import numpy as np
import pytest

from qss.channel import ChannelModel, ChannelSpec
from qss.config import SessionConfig
from qss.net import EXIT_ABORT, EXIT_OK, EXIT_PROTOCOL, EXIT_TRANSPORT, MsgType, Phase, run_role, run_threads
from qss.net.party import Participant, channel_emulator_round
from qss.net.runner import endpoints_for, loopback_addresses
from qss.roles import PARTICIPANTS, Role, players_for
from qss.session import canonical, simulate_session


def bits(text):
    return np.frombuffer(text.encode(), dtype=np.uint8) - ord("0")


class TestEmulatorRound:
    def test_noiseless_phi_plus_dd(self, rng):
        model = ChannelModel(ChannelSpec(1.0))
        z = np.zeros(1000, dtype=np.int8)
        out = channel_emulator_round(z, z, z, z, model, rng)
        np.testing.assert_array_equal(bits(out[Role.ALICE]["outcome"]), bits(out[Role.BOB]["outcome"]))

    def test_each_party_gets_only_its_own(self, rng):
        model = ChannelModel(ChannelSpec(0.9))
        z = np.zeros(10, dtype=np.int8)
        out = channel_emulator_round(z, z, z, z, model, rng)
        assert set(out[Role.SARA]) == {"coincidence"}
        assert set(out[Role.ALICE]) == set(out[Role.BOB]) == {"coincidence", "detected", "outcome"}

    def test_same_seed_same_delivery(self):
        model = ChannelModel(ChannelSpec(0.893, 0.2, 0.1))
        S = np.random.default_rng(0).integers(0, 2, 500)
        a = channel_emulator_round(S, S, S, S, model, np.random.default_rng(3))
        b = channel_emulator_round(S, S, S, S, model, np.random.default_rng(3))
        assert a == b

    def test_silent_party_discards_round(self, rng):
        model = ChannelModel(ChannelSpec(1.0))
        z = np.zeros(4, dtype=np.int8)
        present = np.array([True, False, True, True])
        out = channel_emulator_round(z, z, z, z, model, rng, present)
        assert out[Role.SARA]["coincidence"] == "1011"
        assert out[Role.ALICE]["detected"] == "1011"


EQUIVALENCE_CONFIGS = [
    dict(rounds=10_000, seed=3),
    dict(rounds=10_000, seed=4, dealer="bob"),
    dict(rounds=12_345, seed=5, dealer="alice", loss_a=0.2, loss_b=0.1),
    dict(rounds=30_000, seed=1, audit=True),
    dict(rounds=10_000, seed=2, visibility=1.0, audit=True),
    dict(rounds=10_000, seed=6, adversary="intercept_resend_b"),
    dict(rounds=10_000, seed=7, adversary="dishonest_player_lies", lie_probability=0.4, dishonest_player="bob"),
    dict(rounds=30, seed=1),
]


@pytest.mark.parametrize("kw", EQUIVALENCE_CONFIGS, ids=lambda kw: ",".join(f"{k}={v}" for k, v in kw.items()))
def test_threaded_run_matches_in_process(kw):
    cfg = SessionConfig(timeout=10, **kw)
    ref = simulate_session(cfg)
    runs = run_threads(cfg)
    dealer = runs[cfg.dealer_role]
    assert canonical(dealer.report) == canonical(ref.report)
    expected_exit = EXIT_OK if ref.status == "OK" else EXIT_ABORT
    for role in PARTICIPANTS:
        assert runs[role].exit_code == expected_exit, runs[role].detail
    assert runs[Role.CHANNEL_EMULATOR].exit_code == EXIT_OK


@pytest.fixture(scope="module")
def ok_runs():
    cfg = SessionConfig(rounds=30_000, seed=1, timeout=10)
    runs = run_threads(cfg)
    assert runs[Role.SARA].status == "OK"
    return cfg, runs


class TestInformationFlow:
    def test_channel_outcomes_are_private(self, ok_runs):
        _, runs = ok_runs
        for role in PARTICIPANTS:
            for msg in runs[role].received:
                if msg.sender is Role.CHANNEL_EMULATOR and msg.type is MsgType.OUTCOME:
                    keys = set(msg.payload)
                    assert keys <= {"count", "coincidence", "detected", "outcome"}
                    if role is Role.SARA:
                        assert "outcome" not in keys

    def test_private_bits_only_after_reveal_phase(self, ok_runs):
        cfg, runs = ok_runs
        dealer = cfg.dealer_role
        p1, p2 = players_for(dealer)
        for role in PARTICIPANTS:
            requested = None
            keep_seen = False
            final = False
            for msg in runs[role].received:
                p = msg.payload
                if msg.type is MsgType.ESTIMATION_REQUEST:
                    requested = p["round_ids"]
                if msg.type is MsgType.KEEP_LIST:
                    keep_seen = True
                if msg.type is MsgType.BYE and msg.sender is not Role.CHANNEL_EMULATOR:
                    final = True
                if msg.sender is Role.CHANNEL_EMULATOR:
                    continue
                if "private" in p:
                    # only the dealer receives reveals, and only for the rounds it asked about
                    assert msg.type is MsgType.ESTIMATION_REVEAL and role is dealer
                    sent = [m for peer, m in runs[role].sent if m.type is MsgType.ESTIMATION_REQUEST]
                    assert sent and len(p["private"]) == len(sent[0].payload["round_ids"])
                if "kept_private" in p:
                    assert role is p2 and msg.sender is p1 and keep_seen
                if "audit" in p:
                    assert role is dealer
                    final = True
            if role is not dealer:
                assert requested is not None

    def test_dealer_reveals_last(self, ok_runs):
        cfg, runs = ok_runs
        events = runs[cfg.dealer_role].events
        heard = [i for i, (d, _, m) in enumerate(events) if d == "in" and m.type is MsgType.SIFT_ANNOUNCE_PUBLIC]
        revealed = [i for i, (d, _, m) in enumerate(events) if d == "out" and m.type is MsgType.KEEP_LIST]
        assert len(heard) == 2 and len(revealed) == 2
        assert max(heard) < min(revealed)

    def test_transcript_is_deterministic(self, ok_runs):
        cfg, runs = ok_runs
        again = run_threads(cfg)
        for role in runs:
            a = b"".join(m.encode() for m in sorted(runs[role].received, key=lambda m: m.canonical_key()))
            b = b"".join(m.encode() for m in sorted(again[role].received, key=lambda m: m.canonical_key()))
            assert a == b


def keep_list(runs, cfg):
    return [m.payload for _, m in runs[cfg.dealer_role].sent if m.type is MsgType.KEEP_LIST][0]


def test_announcement_order_does_not_change_keep_list():
    cfg = SessionConfig(rounds=10_000, seed=9, timeout=10)
    alice_late = run_threads(cfg, {Role.ALICE: 0.2})
    bob_late = run_threads(cfg, {Role.BOB: 0.2})

    def first(runs):
        return [m.sender for m in runs[Role.SARA].received if m.type is MsgType.SIFT_ANNOUNCE_PUBLIC]

    assert keep_list(alice_late, cfg) == keep_list(bob_late, cfg)
    assert alice_late[Role.SARA].report == bob_late[Role.SARA].report
    assert first(alice_late) == [Role.BOB, Role.ALICE]
    assert first(bob_late) == [Role.ALICE, Role.BOB]


def test_early_reveal_fault_is_an_order_violation():
    cfg = SessionConfig(rounds=10_000, seed=3, fault="early_reveal", timeout=5)
    runs = run_threads(cfg)
    for role in PARTICIPANTS:
        assert runs[role].exit_code == EXIT_PROTOCOL
        assert runs[role].status == "ORDER_VIOLATION"


def test_intercept_at_emulator_aborts_at_evaluation():
    cfg = SessionConfig(rounds=10_000, seed=3, adversary="intercept_resend_a", timeout=5)
    runs = run_threads(cfg)
    report = runs[Role.SARA].report
    assert report["estimation"]["abort"] is True
    assert report["post_processing"] is None
    assert all(runs[r].exit_code == EXIT_ABORT for r in PARTICIPANTS)


def test_missing_peer_is_a_transport_error():
    cfg = SessionConfig(rounds=100, seed=1, timeout=0.5)
    run = run_role(Role.BOB, cfg, None, {Role.CHANNEL_EMULATOR: ("127.0.0.1", 1)})
    assert run.exit_code == EXIT_TRANSPORT and run.status == "TRANSPORT"


def test_config_mismatch_is_rejected():
    cfg = SessionConfig(rounds=1000, seed=1, timeout=3)
    addresses = loopback_addresses()
    results = {}

    def work(role, c):
        listen_at, dial = endpoints_for(role, addresses)
        results[role] = run_role(role, c, listen_at, dial)

    threads = [threading.Thread(target=work, args=(r, cfg.replace(seed=2) if r is Role.BOB else cfg))
               for r in (Role.CHANNEL_EMULATOR, Role.SARA, Role.ALICE, Role.BOB)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results[Role.BOB].exit_code == EXIT_PROTOCOL
    assert results[Role.BOB].status == "CONFIG_MISMATCH"
    assert all(results[r].exit_code != EXIT_OK for r in PARTICIPANTS)


def test_phase_order_is_enforced():
    p = Participant.__new__(Participant)
    p.role, p.phase = Role.SARA, Phase.SIFTING
    with pytest.raises(Exception, match="ORDER_VIOLATION"):
        p.advance(Phase.ESTIMATION)
