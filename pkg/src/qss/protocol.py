"""Quantum stage, sifting, correlation statistics and key-rate evaluation.

Rounds are held column-wise in a :class:`RoundTable` (one numpy array per
field). Codes: source basis 0=phi 1=varphi, measurement basis 0=D 1=C,
signs 0=+ 1=-, and ``ABSENT`` (-1) for an outcome that was never detected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterator

import numpy as np

from .channel import AdversarySpec, AdversaryStrategy, ChannelModel, ChannelSpec, dishonest_report
from .quantum import MeasBasis, Sign, SourceBasis, SourceSetting
from .rng import SessionRngs
from .roles import PARTICIPANTS, Role, players_for

ABSENT = -1
BATCH_SIZE = 10_000
DEFAULT_ESTIMATION_FRACTION = 0.1
ONE_WAY_THRESHOLD = 0.11002786443835955  # root of 1 - 2 h(Q)


class Status(IntEnum):
    RAW = 0
    DISCARDED_LOSS = 1
    SIFTED_KEPT = 2
    SIFTED_DROPPED = 3
    ESTIMATION_SUBSET = 4


# Public bits (S, A, B) that carry a definite parity s*a*b, with that parity.
SIFT_TABLE: dict[tuple[SourceBasis, MeasBasis, MeasBasis], int] = {
    (SourceBasis.PHI, MeasBasis.D, MeasBasis.D): +1,
    (SourceBasis.PHI, MeasBasis.C, MeasBasis.C): -1,
    (SourceBasis.VARPHI, MeasBasis.D, MeasBasis.C): +1,
    (SourceBasis.VARPHI, MeasBasis.C, MeasBasis.D): +1,
}

ALL_COMBINATIONS = tuple(
    (S, A, B) for S in SourceBasis for A in MeasBasis for B in MeasBasis
)

# _ETA[S, A, B] in {+1, -1} for kept combinations, 0 otherwise
_ETA = np.zeros((2, 2, 2), dtype=np.int8)
for (_S, _A, _B), _eta in SIFT_TABLE.items():
    _ETA[_S.value, _A.value, _B.value] = _eta


def combo_label(combo) -> str:
    S, A, B = combo
    return f"({'phi' if S is SourceBasis.PHI else 'varphi'},{A.name},{B.name})"


def expected_parity(S, A, B) -> np.ndarray:
    """Table lookup of the parity sign (+1/-1), 0 where the combination is dropped."""
    return _ETA[np.asarray(S, dtype=np.intp), np.asarray(A, dtype=np.intp), np.asarray(B, dtype=np.intp)]


def kept_mask(S, A, B) -> np.ndarray:
    """Sift decision; depends on the three public bits only, never on who spoke first."""
    return expected_parity(S, A, B) != 0


@dataclass(frozen=True)
class RoundRecord:
    round_id: int
    source: SourceSetting
    basis_a: MeasBasis
    outcome_a: Sign | None
    basis_b: MeasBasis
    outcome_b: Sign | None
    detected_a: bool
    detected_b: bool
    status: Status


@dataclass(frozen=True, eq=False)
class RoundTable:
    """Column store for protocol rounds; row ``i`` has round id ``round_id[i]``."""

    round_id: np.ndarray
    S: np.ndarray
    s: np.ndarray
    A: np.ndarray
    a: np.ndarray
    B: np.ndarray
    b: np.ndarray
    detected_a: np.ndarray
    detected_b: np.ndarray
    status: np.ndarray

    COLUMNS = ("round_id", "S", "s", "A", "a", "B", "b", "detected_a", "detected_b", "status")

    def __post_init__(self) -> None:
        for name in self.COLUMNS:
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.round_id.size
        if any(getattr(self, c).shape != (n,) for c in self.COLUMNS):
            raise ValueError("round table columns differ in length")
        if np.any((self.a == ABSENT) != ~self.detected_a) or np.any((self.b == ABSENT) != ~self.detected_b):
            raise ValueError("an outcome is ABSENT exactly when its photon was not detected")
        kept = self.status == Status.SIFTED_KEPT
        if np.any(kept & ~kept_mask(self.S, self.A, self.B)):
            raise ValueError("SIFTED_KEPT round outside the sift table")

    def __len__(self) -> int:
        return int(self.round_id.size)

    def __iter__(self) -> Iterator[RoundRecord]:
        return (self.record(i) for i in range(len(self)))

    def record(self, i: int) -> RoundRecord:
        def sign(x):
            return None if x == ABSENT else Sign(int(x))

        return RoundRecord(
            round_id=int(self.round_id[i]),
            source=SourceSetting(SourceBasis(int(self.S[i])), Sign(int(self.s[i]))),
            basis_a=MeasBasis(int(self.A[i])),
            outcome_a=sign(self.a[i]),
            basis_b=MeasBasis(int(self.B[i])),
            outcome_b=sign(self.b[i]),
            detected_a=bool(self.detected_a[i]),
            detected_b=bool(self.detected_b[i]),
            status=Status(int(self.status[i])),
        )

    def with_status(self, status: np.ndarray) -> "RoundTable":
        cols = {c: getattr(self, c) for c in self.COLUMNS}
        cols["status"] = np.asarray(status, dtype=np.int8)
        return RoundTable(**cols)

    def select(self, mask) -> "RoundTable":
        return RoundTable(**{c: getattr(self, c)[mask] for c in self.COLUMNS})

    def public(self, role: Role) -> np.ndarray:
        return {Role.SARA: self.S, Role.ALICE: self.A, Role.BOB: self.B}[role]

    def private(self, role: Role) -> np.ndarray:
        return {Role.SARA: self.s, Role.ALICE: self.a, Role.BOB: self.b}[role]

    def to_bytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(getattr(self, c)).tobytes() for c in self.COLUMNS)

    @classmethod
    def concat(cls, tables: list["RoundTable"]) -> "RoundTable":
        return cls(**{c: np.concatenate([getattr(t, c) for t in tables]) for c in cls.COLUMNS})


# -- quantum stage -----------------------------------------------------------


def draw_choices(rng: np.random.Generator, count: int, p_second: float = 0.5) -> np.ndarray:
    """0/1 choices, 1 with probability ``p_second`` (one uniform per round)."""
    return (rng.random(count) < p_second).astype(np.int8)


def sara_settings(rng: np.random.Generator, count: int, p_varphi: float = 0.5):
    """Sara's public and private bits for a batch of rounds."""
    return draw_choices(rng, count, p_varphi), draw_choices(rng, count)


def player_bases(rng: np.random.Generator, count: int, p_circular: float = 0.5) -> np.ndarray:
    return draw_choices(rng, count, p_circular)


def batches(n_rounds: int, batch_size: int = BATCH_SIZE) -> Iterator[tuple[int, int]]:
    for start in range(0, n_rounds, batch_size):
        yield start, min(batch_size, n_rounds - start)


def assemble_batch(start, S, s, A, B, a, b, det_a, det_b) -> RoundTable:
    det_a = np.asarray(det_a, dtype=bool)
    det_b = np.asarray(det_b, dtype=bool)
    both = det_a & det_b
    return RoundTable(
        round_id=np.arange(start, start + len(S), dtype=np.int64),
        S=np.asarray(S, dtype=np.int8),
        s=np.asarray(s, dtype=np.int8),
        A=np.asarray(A, dtype=np.int8),
        a=np.where(det_a, a, ABSENT).astype(np.int8),
        B=np.asarray(B, dtype=np.int8),
        b=np.where(det_b, b, ABSENT).astype(np.int8),
        detected_a=det_a,
        detected_b=det_b,
        status=np.where(both, Status.RAW, Status.DISCARDED_LOSS).astype(np.int8),
    )


def run_quantum_stage(
    n_rounds: int,
    channel: ChannelSpec,
    adversary: AdversarySpec | None,
    rng: SessionRngs | int,
    *,
    basis_bias: float = 0.5,
    batch_size: int = BATCH_SIZE,
) -> RoundTable:
    """Quantum stage: settings, emission, measurement and detection for ``n_rounds`` rounds.

    ``basis_bias`` is the probability of choosing varphi / C; anything but
    0.5 is the asymmetric variant and is not covered by the security analysis.
    """
    if n_rounds < 1:
        raise ValueError("n_rounds must be at least 1")
    rngs = rng if isinstance(rng, SessionRngs) else SessionRngs(rng)
    model = ChannelModel(channel, adversary)
    parts = []
    for start, count in batches(n_rounds, batch_size):
        S, s = sara_settings(rngs.sara, count, basis_bias)
        A = player_bases(rngs.alice, count, basis_bias)
        B = player_bases(rngs.bob, count, basis_bias)
        a, b, det_a, det_b = model.measure(S, s, A, B, rngs.channel)
        parts.append(assemble_batch(start, S, s, A, B, a, b, det_a, det_b))
    return RoundTable.concat(parts)


# -- sifting ----------------------------------------------------------------


@dataclass(frozen=True)
class SiftResult:
    table: RoundTable
    counts: dict  # combination -> number of candidate rounds with those public bits
    n_candidates: int
    n_kept: int

    @property
    def kept_fraction(self) -> float:
        return self.n_kept / self.n_candidates if self.n_candidates else float("nan")


def sift(table: RoundTable) -> SiftResult:
    """RAW rounds in the sift table become SIFTED_KEPT, other RAW rounds SIFTED_DROPPED."""
    raw = table.status == Status.RAW
    keep = kept_mask(table.S, table.A, table.B)
    status = table.status.copy()
    status[raw & keep] = Status.SIFTED_KEPT
    status[raw & ~keep] = Status.SIFTED_DROPPED
    counts = {}
    for combo in ALL_COMBINATIONS:
        S, A, B = combo
        m = raw & (table.S == S.value) & (table.A == A.value) & (table.B == B.value)
        counts[combo] = int(m.sum())
    return SiftResult(table.with_status(status), counts, int(raw.sum()), int((raw & keep).sum()))


# -- statistics ----------------------------------------------------------------


@dataclass(frozen=True)
class ComboStats:
    """Correlation estimates for one public-bit combination.

    ``counts[s]`` holds (N++, N+-, N-+, N--) over Alice/Bob outcomes for
    Sara's private bit ``s`` (0 = +, 1 = -). Estimates are ``None`` when
    there is no data (the EMPTY marker).
    """

    combo: tuple
    ideal: int
    counts: tuple[tuple[int, int, int, int], tuple[int, int, int, int]]
    eps_plus: float | None
    eps_minus: float | None
    eps: float | None
    eps_stderr: float | None
    qber: float | None
    qber_stderr: float | None
    malformed: bool = False

    @property
    def kept(self) -> bool:
        return self.ideal != 0

    @property
    def n(self) -> int:
        return sum(sum(c) for c in self.counts)

    @property
    def empty(self) -> bool:
        return self.eps is None


@dataclass(frozen=True)
class CorrelationStats:
    combos: dict = field(default_factory=dict)

    def __getitem__(self, combo) -> ComboStats:
        return self.combos[combo]

    def kept(self) -> list[ComboStats]:
        return [c for c in self.combos.values() if c.kept]

    def dropped(self) -> list[ComboStats]:
        return [c for c in self.combos.values() if not c.kept]


def _parity_mean(c: np.ndarray) -> tuple[float | None, float | None]:
    n = int(c.sum())
    if n == 0:
        return None, None
    e = float((c[0] + c[3] - c[1] - c[2]) / n)
    return e, (1.0 - e * e) / n


def compute_stats(table: RoundTable) -> CorrelationStats:
    """Per-combination parity correlations over every round with both detections."""
    both = table.detected_a & table.detected_b
    out = {}
    for combo in ALL_COMBINATIONS:
        S, A, B = combo
        m = both & (table.S == S.value) & (table.A == A.value) & (table.B == B.value)
        ab = table.a[m].astype(np.intp) * 2 + table.b[m].astype(np.intp)
        s = table.s[m]
        counts = np.zeros((2, 4), dtype=np.int64)
        for sv in (0, 1):
            counts[sv] = np.bincount(ab[s == sv], minlength=4)
        (ep, vp), (em, vm) = _parity_mean(counts[0]), _parity_mean(counts[1])
        eps = stderr = None
        if ep is not None and em is not None:
            eps = 0.5 * (ep - em)
            stderr = 0.5 * math.sqrt(vp + vm)
        ideal = SIFT_TABLE.get(combo, 0)
        qber = q_err = None
        malformed = False
        n = int(m.sum())
        if ideal and n:
            parity = 1 - 2 * ((s ^ table.a[m] ^ table.b[m]) & 1)
            qber = float(np.mean(parity != ideal))
            q_err = math.sqrt(qber * (1 - qber) / n)
            malformed = qber > 0.5
        out[combo] = ComboStats(
            combo=combo,
            ideal=ideal,
            counts=(tuple(int(x) for x in counts[0]), tuple(int(x) for x in counts[1])),
            eps_plus=ep,
            eps_minus=em,
            eps=eps,
            eps_stderr=stderr,
            qber=qber,
            qber_stderr=q_err,
            malformed=malformed,
        )
    return CorrelationStats(out)


# -- key rates -----------------------------------------------------------------


def binary_entropy(x: float) -> float:
    if not 0.0 <= x <= 1.0 or math.isnan(x):
        raise ValueError(f"binary entropy needs x in [0, 1], got {x!r}")
    if x in (0.0, 1.0):
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def key_rate(qber: float) -> float:
    """Asymptotic one-way rate max(0, 1 - 2 h(Q)) with phase error = bit error."""
    if not 0.0 <= qber <= 0.5:
        raise ValueError(f"key rate needs Q in [0, 1/2], got {qber!r}")
    return max(0.0, 1.0 - 2.0 * binary_entropy(qber))


def wilson_interval(errors: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = errors / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


class EstimationError(ValueError):
    """The estimation subset holds no correlated rounds; run a longer session."""


@dataclass(frozen=True)
class KeyRateReport:
    """Both dishonesty hypotheses. Rates are asymptotic (no finite-key terms)."""

    q1: float
    q2: float
    n1: int
    n2: int
    errors1: int
    errors2: int
    interval1: tuple[float, float]
    interval2: tuple[float, float]
    r1: float
    r2: float
    malformed: bool = False

    @property
    def r(self) -> float:
        return min(self.r1, self.r2)

    @property
    def abort(self) -> bool:
        return self.r == 0.0

    @property
    def qber(self) -> float:
        """Worst-case QBER, the one the secure rate is limited by."""
        return max(self.q1, self.q2)


def choose_estimation_subsets(
    raw_round_ids: np.ndarray, estimation_fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint round-id subsets for the two hypotheses, drawn from detected rounds.

    The first half of the draw goes to player 1's announcement, the second to
    player 2's; both are returned sorted.
    """
    if not 0.0 < estimation_fraction < 1.0:
        raise ValueError("estimation_fraction must lie in (0, 1)")
    eligible = np.asarray(raw_round_ids, dtype=np.int64)
    m = int(round(estimation_fraction * eligible.size))
    if m < 2:
        raise EstimationError("estimation subset is empty; use more rounds")
    picked = rng.choice(eligible, size=m, replace=False)
    return np.sort(picked[: m // 2]), np.sort(picked[m // 2 :])


def parity_errors(S, A, B, bits: dict) -> np.ndarray:
    """Boolean mismatch of s*a*b against the table, for kept combinations only.

    ``bits`` maps Role -> private-bit array aligned with S/A/B.
    """
    eta = expected_parity(S, A, B)
    parity = 1 - 2 * ((bits[Role.SARA] ^ bits[Role.ALICE] ^ bits[Role.BOB]) & 1)
    return (eta != 0) & (parity != eta)


def estimate_qber(S, A, B, bits: dict) -> tuple[int, int]:
    """(errors, correlated rounds) over one estimation subset."""
    keep = kept_mask(S, A, B)
    errs = parity_errors(S, A, B, bits)
    return int(errs.sum()), int(keep.sum())


def rate_report(errors1: int, n1: int, errors2: int, n2: int) -> KeyRateReport:
    if n1 == 0 or n2 == 0:
        raise EstimationError("no correlated rounds in an estimation subset; use more rounds")
    q1, q2 = errors1 / n1, errors2 / n2
    malformed = q1 > 0.5 or q2 > 0.5
    return KeyRateReport(
        q1=q1,
        q2=q2,
        n1=n1,
        n2=n2,
        errors1=errors1,
        errors2=errors2,
        interval1=wilson_interval(errors1, n1),
        interval2=wilson_interval(errors2, n2),
        r1=key_rate(min(q1, 0.5)),
        r2=key_rate(min(q2, 0.5)),
        malformed=malformed,
    )


def liar_for(dealer: Role, adversary: AdversarySpec | None) -> Role | None:
    if adversary is None or adversary.strategy is not AdversaryStrategy.DISHONEST_PLAYER_LIES:
        return None
    liar = adversary.player or players_for(dealer)[0]
    if liar is dealer:
        raise ValueError("the dealer is trusted and cannot be the dishonest player")
    return liar


def announce_estimation(
    table: RoundTable, role: Role, round_ids: np.ndarray, adversary: AdversarySpec | None,
    dealer: Role, adversary_rng: np.random.Generator | None,
) -> tuple[np.ndarray, np.ndarray]:
    """A player's (public, private) announcement for the requested rounds."""
    idx = np.searchsorted(table.round_id, round_ids)
    public, private = table.public(role)[idx], table.private(role)[idx]
    if liar_for(dealer, adversary) is role:
        public, private = dishonest_report(public, private, adversary, adversary_rng)
    return public, private


def evaluate_session(
    table: RoundTable,
    dealer: Role,
    estimation_fraction: float = DEFAULT_ESTIMATION_FRACTION,
    rng: np.random.Generator | None = None,
    *,
    adversary: AdversarySpec | None = None,
    adversary_rng: np.random.Generator | None = None,
) -> tuple[KeyRateReport, RoundTable]:
    """Parameter estimation: Q1 and Q2 and the rates R1, R2, R.

    Player 1 announces on the first subset and player 2 on the second; on
    each, the other player also discloses its bits so the dealer can check
    the parity. Returns the rate report and the table with both subsets
    tagged ESTIMATION_SUBSET.
    """
    rng = rng if rng is not None else np.random.default_rng()
    p1, p2 = players_for(dealer)
    e1, e2 = choose_estimation_subsets(table.round_id[table.status == Status.RAW], estimation_fraction, rng)
    both = np.union1d(e1, e2)
    ann = {r: announce_estimation(table, r, both, adversary, dealer, adversary_rng) for r in (p1, p2)}
    di = np.searchsorted(table.round_id, both)
    ann[dealer] = (table.public(dealer)[di], table.private(dealer)[di])
    results = []
    for subset in (e1, e2):
        sel = np.isin(both, subset)
        pub = {r: ann[r][0][sel] for r in PARTICIPANTS}
        priv = {r: ann[r][1][sel] for r in PARTICIPANTS}
        results.append(estimate_qber(pub[Role.SARA], pub[Role.ALICE], pub[Role.BOB], priv))
    (err1, n1), (err2, n2) = results
    status = table.status.copy()
    status[np.isin(table.round_id, both)] = Status.ESTIMATION_SUBSET
    return rate_report(err1, n1, err2, n2), table.with_status(status)


def reconstruct_secret(table: RoundTable, dealer: Role = Role.SARA) -> tuple[np.ndarray, float]:
    """Players' joint reconstruction of the dealer's private bits on kept rounds.

    Returns the reconstructed bits (0 = +, 1 = -) in round order and the
    agreement rate with the dealer's true bits.
    """
    kept = table.select(table.status == Status.SIFTED_KEPT)
    p1, p2 = players_for(dealer)
    eta_bit = (expected_parity(kept.S, kept.A, kept.B) < 0).astype(np.int8)
    guess = eta_bit ^ kept.private(p1) ^ kept.private(p2)
    if guess.size == 0:
        return guess, float("nan")
    return guess, float(np.mean(guess == kept.private(dealer)))


def mutual_information(x, y) -> float:
    """Plug-in mutual information (bits) between two discrete samples."""
    x = np.asarray(x)
    y = np.asarray(y)
    _, xi = np.unique(x, return_inverse=True, axis=0 if x.ndim > 1 else None)
    _, yi = np.unique(y, return_inverse=True, axis=0 if y.ndim > 1 else None)
    joint = np.zeros((xi.max() + 1, yi.max() + 1))
    np.add.at(joint, (xi.ravel(), yi.ravel()), 1)
    joint /= joint.sum()
    px, py = joint.sum(axis=1, keepdims=True), joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log2(joint[nz] / (px @ py)[nz])))
