"""Exact dense representation of one to three polarization qubits.

Basis states are ordered lexicographically with H before V on every qubit
and the leftmost qubit first, so a two-photon amplitude vector reads
(HH, HV, VH, VV) with Alice's photon on the left. In three-qubit states the
extra qubit (Sara's, in the GHZ picture) is the leftmost one.

States are compared through ``overlap_sq`` only; global phases are never
significant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping

import numpy as np

ALGEBRA_TOL = 1e-12
PSD_TOL = 1e-10
MIN_BRANCH_PROB = 1e-15
SAMPLE_SUM_TOL = 1e-9

_SQRT_HALF = 1.0 / math.sqrt(2.0)


class SourceBasis(Enum):
    """Sara's public bit: which pair of entangled states she draws from."""

    PHI = 0
    VARPHI = 1


class MeasBasis(Enum):
    """Alice's and Bob's public bit: diagonal or circular analyzer."""

    D = 0
    C = 1


class Sign(Enum):
    """A private bit. ``value`` is the key-bit encoding (+ -> 0, - -> 1)."""

    PLUS = 0
    MINUS = 1

    @property
    def pm(self) -> int:
        return 1 if self is Sign.PLUS else -1

    @classmethod
    def from_pm(cls, x: int) -> "Sign":
        if x == 1:
            return cls.PLUS
        if x == -1:
            return cls.MINUS
        raise ValueError(f"sign must be +1 or -1, got {x!r}")

    def __neg__(self) -> "Sign":
        return Sign.MINUS if self is Sign.PLUS else Sign.PLUS

    def __mul__(self, other: "Sign") -> "Sign":
        return Sign(self.value ^ other.value)


# Fixed joint-outcome order used for probability vectors and inverse-CDF sampling.
OUTCOME_ORDER: tuple[tuple[Sign, Sign], ...] = (
    (Sign.PLUS, Sign.PLUS),
    (Sign.PLUS, Sign.MINUS),
    (Sign.MINUS, Sign.PLUS),
    (Sign.MINUS, Sign.MINUS),
)


class InvalidStateError(ValueError):
    pass


class ImpossibleBranchError(ValueError):
    """A projection whose Born probability is numerically zero."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.complex128)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StateVector:
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        amps = _frozen(self.amplitudes).ravel()
        object.__setattr__(self, "amplitudes", amps)
        n = amps.size.bit_length() - 1
        if amps.size < 2 or 2**n != amps.size or n > 3:
            raise InvalidStateError(f"{amps.size} amplitudes is not 2^n for n in 1..3")
        if not np.all(np.isfinite(amps)):
            raise InvalidStateError("non-finite amplitude")
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > ALGEBRA_TOL:
            raise InvalidStateError(f"state norm {norm!r} differs from 1")

    @classmethod
    def normalized(cls, amplitudes) -> "StateVector":
        amps = np.asarray(amplitudes, dtype=np.complex128).ravel()
        return cls(amps / np.linalg.norm(amps))

    @property
    def n_qubits(self) -> int:
        return self.amplitudes.size.bit_length() - 1

    def tensor(self, other: "StateVector") -> "StateVector":
        return StateVector(np.kron(self.amplitudes, other.amplitudes))

    def density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()))

    def __repr__(self) -> str:
        return f"StateVector({np.round(self.amplitudes, 6).tolist()})"


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    entries: np.ndarray

    def __post_init__(self) -> None:
        rho = _frozen(self.entries)
        object.__setattr__(self, "entries", rho)
        d = rho.shape[0]
        if rho.ndim != 2 or rho.shape != (d, d) or d not in (2, 4, 8):
            raise InvalidStateError(f"bad density matrix shape {rho.shape}")
        if not np.all(np.isfinite(rho)):
            raise InvalidStateError("non-finite density matrix entry")
        if np.max(np.abs(rho - rho.conj().T)) > ALGEBRA_TOL:
            raise InvalidStateError("density matrix is not Hermitian")
        tr = complex(np.trace(rho))
        if abs(tr - 1.0) > ALGEBRA_TOL:
            raise InvalidStateError(f"trace {tr!r} differs from 1")
        if np.min(np.linalg.eigvalsh(rho)) < -PSD_TOL:
            raise InvalidStateError("density matrix is not positive semidefinite")

    @classmethod
    def maximally_mixed(cls, n_qubits: int) -> "DensityMatrix":
        d = 2**n_qubits
        return cls(np.eye(d) / d)

    @property
    def n_qubits(self) -> int:
        return self.entries.shape[0].bit_length() - 1

    def tensor(self, other: "DensityMatrix") -> "DensityMatrix":
        return DensityMatrix(np.kron(self.entries, other.entries))


@dataclass(frozen=True)
class SourceSetting:
    """Sara's choice for one round, equivalently a pump phase."""

    basis: SourceBasis
    sign: Sign

    @property
    def pump_phase(self) -> float:
        # (phi,+) -> 0, (varphi,+) -> pi/2, (phi,-) -> pi, (varphi,-) -> 3pi/2
        quarter_turns = self.basis.value + 2 * self.sign.value
        return quarter_turns * math.pi / 2

    @classmethod
    def from_pump_phase(cls, alpha: float) -> "SourceSetting":
        turns = (alpha % (2 * math.pi)) / (math.pi / 2)
        k = round(turns)
        if abs(turns - k) > 1e-9:
            raise ValueError(f"pump phase {alpha!r} is not one of Sara's four settings")
        k %= 4
        return cls(SourceBasis(k % 2), Sign(k // 2))


H = StateVector([1.0, 0.0])
V = StateVector([0.0, 1.0])


def make_source_state(setting: SourceSetting) -> StateVector:
    """(|HH> + e^{i alpha}|VV>)/sqrt(2) for the setting's pump phase."""
    phase = {0: 1.0, 1: 1j, 2: -1.0, 3: -1j}[setting.basis.value + 2 * setting.sign.value]
    return StateVector(np.array([_SQRT_HALF, 0.0, 0.0, phase * _SQRT_HALF]))


def pump_state(alpha: float) -> StateVector:
    """Two-photon state for an arbitrary pump phase."""
    return StateVector(np.array([_SQRT_HALF, 0.0, 0.0, np.exp(1j * alpha) * _SQRT_HALF]))


def eigenstate(basis: MeasBasis, sign: Sign) -> StateVector:
    """|D+-> = (|H> +- |V>)/sqrt(2), |C+-> = (|H> +- i|V>)/sqrt(2)."""
    v = sign.pm * (1.0 if basis is MeasBasis.D else 1j)
    return StateVector(np.array([_SQRT_HALF, v * _SQRT_HALF]))


def ghz_state() -> StateVector:
    amps = np.zeros(8, dtype=np.complex128)
    amps[0] = amps[7] = _SQRT_HALF
    return StateVector(amps)


def overlap_sq(u: StateVector, v: StateVector) -> float:
    if u.n_qubits != v.n_qubits:
        raise ValueError(f"dimension mismatch: {u.n_qubits} vs {v.n_qubits} qubits")
    return float(min(1.0, abs(np.vdot(u.amplitudes, v.amplitudes)) ** 2))


def fidelity(rho: DensityMatrix, psi: StateVector) -> float:
    """<psi|rho|psi> for a pure reference state."""
    if rho.n_qubits != psi.n_qubits:
        raise ValueError(f"dimension mismatch: {rho.n_qubits} vs {psi.n_qubits} qubits")
    f = np.vdot(psi.amplitudes, rho.entries @ psi.amplitudes).real
    return float(min(1.0, max(0.0, f)))


def werner_state(psi: StateVector, visibility: float) -> DensityMatrix:
    """V|psi><psi| + (1 - V) I/d."""
    d = psi.amplitudes.size
    pure = np.outer(psi.amplitudes, psi.amplitudes.conj())
    return DensityMatrix(visibility * pure + (1.0 - visibility) * np.eye(d) / d)


def _projector(basis: MeasBasis, sign: Sign) -> np.ndarray:
    e = eigenstate(basis, sign).amplitudes
    return np.outer(e, e.conj())


def joint_probability_vector(rho: DensityMatrix, basis_a: MeasBasis, basis_b: MeasBasis) -> np.ndarray:
    """P_ab = <ab|rho|ab> as a length-4 array in ``OUTCOME_ORDER``."""
    if rho.n_qubits != 2:
        raise InvalidStateError("joint probabilities need a two-qubit state")
    probs = np.empty(4)
    for k, (a, b) in enumerate(OUTCOME_ORDER):
        ket = np.kron(eigenstate(basis_a, a).amplitudes, eigenstate(basis_b, b).amplitudes)
        probs[k] = np.vdot(ket, rho.entries @ ket).real
    return np.clip(probs, 0.0, 1.0)


def joint_probabilities(
    rho: DensityMatrix, basis_a: MeasBasis, basis_b: MeasBasis
) -> dict[tuple[Sign, Sign], float]:
    probs = joint_probability_vector(rho, basis_a, basis_b)
    return {ab: float(p) for ab, p in zip(OUTCOME_ORDER, probs)}


def _check_distribution(probs: np.ndarray) -> None:
    if probs.shape[-1] != 4 or np.any(probs < -SAMPLE_SUM_TOL) or not np.all(np.isfinite(probs)):
        raise ValueError("malformed joint distribution")
    if np.any(np.abs(probs.sum(axis=-1) - 1.0) > SAMPLE_SUM_TOL):
        raise ValueError("joint distribution does not sum to 1")


def sample_outcome(probs: Mapping[tuple[Sign, Sign], float], rng: np.random.Generator) -> tuple[Sign, Sign]:
    """Draw one joint outcome by inverse CDF over ``OUTCOME_ORDER``.

    Missing keys are treated as probability zero. Consumes exactly one
    uniform from ``rng``.
    """
    unknown = set(probs) - set(OUTCOME_ORDER)
    if unknown:
        raise ValueError(f"unknown outcomes {unknown}")
    vec = np.array([probs.get(ab, 0.0) for ab in OUTCOME_ORDER], dtype=float)
    _check_distribution(vec)
    k = int(sample_outcome_indices(vec[None, :], rng.random(1))[0])
    return OUTCOME_ORDER[k]


def sample_outcome_indices(prob_rows: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Vectorised inverse-CDF: row i of ``prob_rows`` sampled with ``uniforms[i]``.

    Returns indices into ``OUTCOME_ORDER`` (0..3).
    """
    prob_rows = np.asarray(prob_rows, dtype=float)
    _check_distribution(prob_rows)
    cdf = np.cumsum(prob_rows, axis=-1)
    idx = (uniforms[:, None] >= cdf[:, :3]).sum(axis=1)
    # never land on a zero-probability tail from rounding in the cumulative sum
    for k in range(3, 0, -1):
        stuck = (idx == k) & (prob_rows[np.arange(idx.size), k] <= 0.0)
        idx[stuck] -= 1
    return idx.astype(np.int8)


def project_qubit(
    state: StateVector, qubit: int, basis: MeasBasis, sign: Sign
) -> tuple[float, StateVector]:
    """Project one qubit onto an eigenstate.

    Returns the Born probability and the renormalised state of the remaining
    qubits (in their original order).
    """
    n = state.n_qubits
    if n < 2:
        raise ValueError("need at least two qubits to leave a residual state")
    if not 0 <= qubit < n:
        raise ValueError(f"qubit index {qubit} out of range")
    bra = eigenstate(basis, sign).amplitudes.conj()
    tensor = state.amplitudes.reshape((2,) * n)
    residual = np.tensordot(bra, tensor, axes=([0], [qubit])).ravel()
    prob = float(np.vdot(residual, residual).real)
    if prob < MIN_BRANCH_PROB:
        raise ImpossibleBranchError(f"projection probability {prob:.3g} is zero")
    return prob, StateVector(residual / math.sqrt(prob))


def project_first_qubit(state: StateVector, basis: MeasBasis, sign: Sign) -> tuple[float, StateVector]:
    if state.n_qubits != 3:
        raise ValueError("expected a three-qubit state")
    return project_qubit(state, 0, basis, sign)


def project_qubit_density(
    rho: DensityMatrix, qubit: int, basis: MeasBasis, sign: Sign
) -> tuple[float, DensityMatrix]:
    """Measure one qubit of a mixed state; returns (prob, conditional state of the rest)."""
    n = rho.n_qubits
    if not 0 <= qubit < n or n < 2:
        raise ValueError(f"cannot project qubit {qubit} of a {n}-qubit state")
    e = eigenstate(basis, sign).amplitudes
    t = rho.entries.reshape((2,) * (2 * n))
    # <e| on the row index of `qubit`, |e> on its column index
    t = np.tensordot(e.conj(), t, axes=([0], [qubit]))
    t = np.tensordot(t, e, axes=([n - 1 + qubit], [0]))
    d = 2 ** (n - 1)
    cond = t.reshape(d, d)
    prob = float(np.trace(cond).real)
    if prob < MIN_BRANCH_PROB:
        raise ImpossibleBranchError(f"projection probability {prob:.3g} is zero")
    cond = cond / prob
    return prob, DensityMatrix((cond + cond.conj().T) / 2)
