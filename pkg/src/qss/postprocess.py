"""One-way post-processing: player combination, block-parity reconciliation,
Toeplitz privacy amplification and key verification tags.

Key bits use the global sign mapping + -> 0, - -> 1.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .protocol import RoundTable, Status, binary_entropy, expected_parity, key_rate
from .roles import Role, players_for

DEFAULT_PASSES = 4
DEFAULT_SECURITY_MARGIN = 64
MIN_BLOCK = 4


class NoKeyError(RuntimeError):
    """Privacy amplification would leave no key (ABORT_NO_KEY)."""


def as_bits(bits) -> np.ndarray:
    arr = np.asarray(bits, dtype=np.uint8).ravel()
    if np.any(arr > 1):
        raise ValueError("bit strings hold only 0 and 1")
    return arr


def bits_to_str(bits) -> str:
    return as_bits(bits).tobytes().translate(bytes.maketrans(b"\x00\x01", b"01")).decode()


def str_to_bits(text: str) -> np.ndarray:
    raw = text.encode()
    if raw.strip(b"01"):
        raise ValueError("bit strings are written with the characters 0 and 1 only")
    return (np.frombuffer(raw, dtype=np.uint8) - ord("0")).astype(np.uint8)


def kept_rounds(table: RoundTable) -> RoundTable:
    return table.select(table.status == Status.SIFTED_KEPT)


def dealer_key(table: RoundTable, dealer: Role) -> np.ndarray:
    return as_bits(kept_rounds(table).private(dealer))


def combine_bits(S, A, B, bits_p1, bits_p2) -> np.ndarray:
    """Combined player bit: eta*p1*p2 in sign form, XOR in bit form."""
    eta_bit = (expected_parity(S, A, B) < 0).astype(np.uint8)
    return as_bits(eta_bit ^ np.asarray(bits_p1, dtype=np.uint8) ^ np.asarray(bits_p2, dtype=np.uint8))


def players_combine(table: RoundTable, dealer: Role = Role.SARA) -> np.ndarray:
    """The string the two players jointly hold for the dealer's secret."""
    kept = kept_rounds(table)
    p1, p2 = players_for(dealer)
    return combine_bits(kept.S, kept.A, kept.B, kept.private(p1), kept.private(p2))


# -- reconciliation -------------------------------------------------------------

Query = tuple[int, int, int]  # (pass index, start, stop) in that pass's shuffled order


@dataclass
class ReconciliationTranscript:
    """Everything the dealer disclosed: shuffle seeds and the parity of each query."""

    n: int
    qber_estimate: float
    block_sizes: list[int]
    shuffle_seeds: list[int]
    exchanges: list[tuple[list[Query], list[int]]] = field(default_factory=list)
    # one per completed bisection; public, since every bisection ends in a flip
    corrections: int = 0

    @property
    def total_leak_bits(self) -> int:
        return sum(len(q) for q, _ in self.exchanges)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "qber_estimate": self.qber_estimate,
            "block_sizes": list(self.block_sizes),
            "shuffle_seeds": [str(s) for s in self.shuffle_seeds],
            "exchanges": [
                {"queries": [list(q) for q in qs], "parities": "".join(map(str, ps))}
                for qs, ps in self.exchanges
            ],
            "total_leak_bits": self.total_leak_bits,
            "corrections": self.corrections,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReconciliationTranscript":
        t = cls(d["n"], d["qber_estimate"], list(d["block_sizes"]), [int(s) for s in d["shuffle_seeds"]])
        for ex in d["exchanges"]:
            t.exchanges.append(([tuple(q) for q in ex["queries"]], [int(c) for c in ex["parities"]]))
        t.corrections = int(d.get("corrections", 0))
        return t


def plan_blocks(n: int, qber_estimate: float, passes: int = DEFAULT_PASSES) -> list[int]:
    """Block size per pass: ceil(0.73/Q) clamped to [4, n], doubling each pass.

    A zero estimate gets a single whole-key verification pass.
    """
    if n < 1:
        raise ValueError("cannot reconcile an empty key")
    if qber_estimate <= 0.0:
        return [n]
    k = min(max(math.ceil(0.73 / qber_estimate), MIN_BLOCK), n)
    sizes = []
    for _ in range(passes):
        sizes.append(k)
        k = min(2 * k, n)
    return sizes


def permutation(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).permutation(n)


def dealer_parities(key: np.ndarray, perms: Sequence[np.ndarray], queries: Sequence[Query]) -> list[int]:
    """What the dealer answers for a batch of parity queries."""
    out = []
    for p, lo, hi in queries:
        out.append(int(key[perms[p][lo:hi]].sum() & 1))
    return out


class CascadeReceiver:
    """Player side of the block-parity bisection.

    Errors are located by asking the dealer for parities of shuffled blocks
    and halving any block whose parity disagrees. Each flip reopens blocks
    of earlier passes that contain the flipped bit (backtracking), so work
    proceeds in waves: one pass at a time, all of its known odd ranges bisected
    in lockstep. Ranges within a pass are nested or disjoint, so the minimal
    odd ones can be searched in parallel without ever flipping a bit twice.
    """

    def __init__(self, key, block_sizes: Sequence[int], shuffle_seeds: Sequence[int]):
        self.key = as_bits(key).copy()
        self.n = self.key.size
        self.block_sizes = list(block_sizes)
        self.perms = [permutation(self.n, s) for s in shuffle_seeds]
        self.known: dict[Query, int] = {}
        self.flips = 0

    def _prefix(self, p: int) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.key[self.perms[p]], dtype=np.int64)))

    def _odd_ranges(self, p: int, prefix: np.ndarray) -> list[Query]:
        odd = [q for q, par in self.known.items() if q[0] == p and ((prefix[q[2]] - prefix[q[1]]) & 1) != par]
        odd.sort(key=lambda q: (q[2] - q[1], q[1]))
        chosen: list[Query] = []
        for q in odd:
            # drop ranges that contain an already chosen (smaller) odd range
            if not any(q[1] <= c[1] and c[2] <= q[2] for c in chosen):
                chosen.append(q)
        return sorted(chosen, key=lambda q: q[1])

    def run(self, ask: Callable[[list[Query]], list[int]]) -> np.ndarray:
        def request(queries: list[Query]) -> None:
            fresh = [q for q in queries if q not in self.known]
            if fresh:
                for q, par in zip(fresh, ask(fresh)):
                    self.known[q] = int(par)

        for p, k in enumerate(self.block_sizes):
            request([(p, lo, min(lo + k, self.n)) for lo in range(0, self.n, k)])
            while True:
                wave = None
                for q in range(p + 1):
                    prefix = self._prefix(q)
                    ranges = self._odd_ranges(q, prefix)
                    if ranges:
                        wave = (q, ranges)
                        break
                if wave is None:
                    break
                self._bisect(wave[0], wave[1], request)
        return self.key

    def _bisect(self, p: int, ranges: list[Query], request) -> None:
        active = list(ranges)
        while active:
            halves = [(p, lo, (lo + hi) // 2) for _, lo, hi in active if hi - lo > 1]
            request(halves)
            prefix = self._prefix(p)
            nxt = []
            for _, lo, hi in active:
                if hi - lo == 1:
                    self.key[self.perms[p][lo]] ^= 1
                    self.flips += 1
                    continue
                mid = (lo + hi) // 2
                left_odd = ((prefix[mid] - prefix[lo]) & 1) != self.known[(p, lo, mid)]
                nxt.append((p, lo, mid) if left_odd else (p, mid, hi))
            active = nxt


def reconcile(
    dealer_bits,
    player_bits,
    rng: np.random.Generator,
    qber_estimate: float,
    passes: int = DEFAULT_PASSES,
) -> tuple[np.ndarray, ReconciliationTranscript]:
    """Correct the player's string towards the dealer's; the dealer's never changes.

    Returns the corrected player string and the transcript of everything
    disclosed. Meant for QBER below about 0.15.
    """
    x, y = as_bits(dealer_bits), as_bits(player_bits)
    if x.size != y.size:
        raise ValueError(f"key length mismatch: {x.size} vs {y.size}")
    sizes = plan_blocks(x.size, qber_estimate, passes)
    seeds = draw_shuffle_seeds(rng, len(sizes))
    transcript = ReconciliationTranscript(x.size, qber_estimate, sizes, seeds)
    receiver = CascadeReceiver(y, sizes, seeds)

    def ask(queries):
        parities = dealer_parities(x, receiver.perms, queries)
        transcript.exchanges.append((list(queries), parities))
        return parities

    corrected = receiver.run(ask)
    transcript.corrections = receiver.flips
    return corrected, transcript


def draw_shuffle_seeds(rng: np.random.Generator, count: int) -> list[int]:
    return [int(s) for s in rng.integers(0, 2**63, size=count)]


def replay_leak(transcript: ReconciliationTranscript, dealer_bits) -> int:
    """Recount disclosed parities and check every one against the dealer's key."""
    x = as_bits(dealer_bits)
    perms = [permutation(transcript.n, s) for s in transcript.shuffle_seeds]
    count = 0
    for queries, parities in transcript.exchanges:
        if dealer_parities(x, perms, queries) != list(parities):
            raise ValueError("transcript does not match the dealer key")
        count += len(queries)
    return count


# -- privacy amplification ------------------------------------------------------


@dataclass(frozen=True)
class ToeplitzSeed:
    """m x n binary Toeplitz matrix T[i, j] = first_column[i - j] (i >= j), first_row[j - i] (j > i).

    ``first_row[0]`` and ``first_column[0]`` are the same entry.
    """

    first_row: np.ndarray
    first_column: np.ndarray

    def __post_init__(self) -> None:
        row, col = as_bits(self.first_row), as_bits(self.first_column)
        if col.size > row.size or col.size < 1:
            raise ValueError("Toeplitz seed needs 1 <= m <= n")
        if row[0] != col[0]:
            raise ValueError("first_row[0] and first_column[0] must agree")
        object.__setattr__(self, "first_row", row)
        object.__setattr__(self, "first_column", col)

    @property
    def shape(self) -> tuple[int, int]:
        return self.first_column.size, self.first_row.size

    @classmethod
    def random(cls, m: int, n: int, rng: np.random.Generator) -> "ToeplitzSeed":
        raw = rng.integers(0, 2, size=n + m - 1, dtype=np.uint8)
        return cls(raw[:n], np.concatenate((raw[:1], raw[n:])))

    def matrix(self) -> np.ndarray:
        m, n = self.shape
        i = np.arange(m)[:, None]
        j = np.arange(n)[None, :]
        d = j - i
        return np.where(d >= 0, self.first_row[np.clip(d, 0, n - 1)], self.first_column[np.clip(-d, 0, m - 1)])

    def hash(self, key) -> np.ndarray:
        x = as_bits(key)
        m, n = self.shape
        if x.size != n:
            raise ValueError(f"seed expects {n} input bits, got {x.size}")
        # t[k] = T[i, j] on the diagonal j - i = k - (m - 1)
        t = np.concatenate((self.first_column[::-1], self.first_row[1:])).astype(np.int64)
        # out[i] = sum_j t[j - i + m - 1] x[j]; 'valid' correlation gives lag m-1-i at index i
        return (np.correlate(t, x.astype(np.int64), mode="valid")[::-1] & 1).astype(np.uint8)

    def to_dict(self) -> dict:
        return {"first_row": bits_to_str(self.first_row), "first_column": bits_to_str(self.first_column)}

    @classmethod
    def from_dict(cls, d: dict) -> "ToeplitzSeed":
        return cls(str_to_bits(d["first_row"]), str_to_bits(d["first_column"]))


def final_length(n: int, qber: float, leak_bits: int, security_margin: int = DEFAULT_SECURITY_MARGIN) -> int:
    """n - ceil(2 n h(Q)) - leak - margin when the rate is positive, else -leak - margin."""
    if key_rate(qber) == 0.0:
        secure = 0
    else:
        # n - ceil(2 n h) rather than floor(n (1 - 2h)): 1 - 2h rounds to 1 for tiny Q
        secure = n - math.ceil(2 * n * binary_entropy(qber))
    return secure - int(leak_bits) - int(security_margin)


def privacy_amplify(
    key,
    leak_bits: int,
    qber: float,
    security_margin: int = DEFAULT_SECURITY_MARGIN,
    *,
    seed: ToeplitzSeed | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ToeplitzSeed]:
    """Compress ``key`` with a Toeplitz hash to the secure length.

    Either pass a seed of the right shape or an rng to draw one. Raises
    :class:`NoKeyError` when the secure length is not positive.
    """
    x = as_bits(key)
    m = final_length(x.size, qber, leak_bits, security_margin)
    if m <= 0:
        raise NoKeyError(f"secure length {m} <= 0 (n={x.size}, Q={qber:.4f}, leak={leak_bits})")
    if seed is None:
        if rng is None:
            raise ValueError("need a Toeplitz seed or an rng to draw one")
        seed = ToeplitzSeed.random(m, x.size, rng)
    elif seed.shape != (m, x.size):
        raise ValueError(f"seed shape {seed.shape} does not match ({m}, {x.size})")
    return seed.hash(x), seed


def verification_tag(key, tag_key: bytes) -> str:
    """64-bit keyed BLAKE2b tag of a bit string, hex encoded."""
    return hashlib.blake2b(bits_to_str(key).encode(), digest_size=8, key=tag_key).hexdigest()


# -- whole post-processing stage --------------------------------------------------

OK = "OK"
ABORT_NO_KEY = "ABORT_NO_KEY"
FAILED_VERIFY = "FAILED_VERIFY"


def amplification_qber(transcript: ReconciliationTranscript) -> float:
    """Error rate fed to the length formula: corrections found over the whole key."""
    return min(0.5, transcript.corrections / transcript.n) if transcript.n else 0.5


@dataclass
class FinalKeys:
    status: str
    sifted_length: int
    transcript: ReconciliationTranscript | None = None
    qber_used: float | None = None
    dealer_key: np.ndarray | None = None
    players_key: np.ndarray | None = None
    seed: ToeplitzSeed | None = None
    dealer_tag: str | None = None
    players_tag: str | None = None
    detail: str = ""

    @property
    def leak_bits(self) -> int:
        return self.transcript.total_leak_bits if self.transcript else 0

    @property
    def length(self) -> int:
        return 0 if self.dealer_key is None else int(self.dealer_key.size)

    @property
    def keys_match(self) -> bool:
        return self.status == OK


def finalize_session(
    dealer_bits,
    players_bits,
    qber_estimate: float,
    rng: np.random.Generator,
    security_margin: int = DEFAULT_SECURITY_MARGIN,
    passes: int = DEFAULT_PASSES,
) -> FinalKeys:
    """Reconcile, amplify and verify.

    ``rng`` is the dealer's stream; it is drawn in a fixed order (shuffle
    seeds, Toeplitz seed, 16-byte tag key).
    """
    x, y = as_bits(dealer_bits), as_bits(players_bits)
    if x.size == 0:
        return FinalKeys(ABORT_NO_KEY, 0, detail="no sifted key")
    corrected, transcript = reconcile(x, y, rng, qber_estimate, passes)
    q = amplification_qber(transcript)
    out = FinalKeys(OK, int(x.size), transcript, q)
    try:
        out.dealer_key, out.seed = privacy_amplify(x, transcript.total_leak_bits, q, security_margin, rng=rng)
    except NoKeyError as exc:
        out.status, out.detail = ABORT_NO_KEY, str(exc)
        return out
    out.players_key = out.seed.hash(corrected)
    tag_key = rng.bytes(16)
    out.dealer_tag = verification_tag(out.dealer_key, tag_key)
    out.players_tag = verification_tag(out.players_key, tag_key)
    if out.dealer_tag != out.players_tag:
        out.status = FAILED_VERIFY
    return out
