"""Noise, loss and adversary models between Sara's source and the analyzers."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .quantum import (
    DensityMatrix,
    ImpossibleBranchError,
    MeasBasis,
    Sign,
    SourceBasis,
    SourceSetting,
    eigenstate,
    joint_probability_vector,
    make_source_state,
    project_qubit_density,
    sample_outcome_indices,
)
from .roles import Role

DEFAULT_VISIBILITY = 0.893


class Arm(Enum):
    A = 0
    B = 1


class AdversaryStrategy(Enum):
    NONE = "none"
    INTERCEPT_RESEND_A = "intercept_resend_a"
    INTERCEPT_RESEND_B = "intercept_resend_b"
    DISHONEST_PLAYER_LIES = "dishonest_player_lies"


def _check_unit(name: str, x: float) -> None:
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x!r}")


@dataclass(frozen=True)
class ChannelSpec:
    visibility: float = DEFAULT_VISIBILITY
    loss_a: float = 0.0
    loss_b: float = 0.0

    def __post_init__(self) -> None:
        _check_unit("visibility", self.visibility)
        _check_unit("loss_a", self.loss_a)
        _check_unit("loss_b", self.loss_b)


@dataclass(frozen=True)
class AdversarySpec:
    strategy: AdversaryStrategy = AdversaryStrategy.NONE
    lie_probability: float = 0.0
    # which participant lies; None means "player 1 of whoever is dealer"
    player: Role | None = None

    def __post_init__(self) -> None:
        _check_unit("lie_probability", self.lie_probability)
        if self.player is Role.CHANNEL_EMULATOR:
            raise ValueError("the channel emulator cannot be a dishonest player")

    @property
    def intercept_arm(self) -> Arm | None:
        return {
            AdversaryStrategy.INTERCEPT_RESEND_A: Arm.A,
            AdversaryStrategy.INTERCEPT_RESEND_B: Arm.B,
        }.get(self.strategy)


def apply_depolarizing(state: DensityMatrix, visibility: float) -> DensityMatrix:
    """Joint two-qubit depolarizing channel: V*rho + (1 - V)*I/4."""
    _check_unit("visibility", visibility)
    if state.n_qubits != 2:
        raise ValueError("depolarizing channel acts on the two-photon state")
    return DensityMatrix(visibility * state.entries + (1.0 - visibility) * np.eye(4) / 4)


def intercept_resend(
    state: DensityMatrix, arm: Arm, eve_basis: MeasBasis, eve_sign: Sign
) -> tuple[float, DensityMatrix]:
    """Eve measures one photon and forwards the eigenstate she observed.

    Returns the probability of her outcome and the resulting product state.
    """
    prob, rest = project_qubit_density(state, arm.value, eve_basis, eve_sign)
    resent = eigenstate(eve_basis, eve_sign).density()
    post = resent.tensor(rest) if arm is Arm.A else rest.tensor(resent)
    return prob, post


@dataclass(frozen=True)
class Interception:
    eve_basis: MeasBasis
    eve_sign: Sign
    probability: float
    state: DensityMatrix


def apply_intercept_resend(
    setting: SourceSetting, arm: Arm, rng: np.random.Generator, visibility: float = 1.0
) -> Interception:
    """One intercept-resend event on the (optionally depolarized) source state."""
    rho = apply_depolarizing(make_source_state(setting).density(), visibility)
    basis = MeasBasis(int(rng.integers(0, 2)))
    p_plus, _ = intercept_resend(rho, arm, basis, Sign.PLUS)
    sign = Sign.PLUS if rng.random() < p_plus else Sign.MINUS
    prob, post = intercept_resend(rho, arm, basis, sign)
    return Interception(basis, sign, prob, post)


def apply_loss(
    rng: np.random.Generator, loss_a: float, loss_b: float, size: int | None = None
):
    """Independent survival draws per arm; a photon survives when u >= loss."""
    _check_unit("loss_a", loss_a)
    _check_unit("loss_b", loss_b)
    u = rng.random((2,) if size is None else (2, size))
    det_a, det_b = u[0] >= loss_a, u[1] >= loss_b
    if size is None:
        return bool(det_a), bool(det_b)
    return det_a, det_b


def dishonest_report(public_bits, private_bits, spec: AdversarySpec, rng: np.random.Generator):
    """What a lying player announces during parameter estimation.

    Public bits are reported truthfully; each private bit is flipped with
    probability ``spec.lie_probability``. Accepts scalars or arrays of 0/1.
    """
    if spec.strategy is not AdversaryStrategy.DISHONEST_PLAYER_LIES:
        raise ValueError("dishonest_report needs the DISHONEST_PLAYER_LIES strategy")
    private = np.asarray(private_bits, dtype=np.int8)
    flips = (rng.random(private.shape) < spec.lie_probability).astype(np.int8)
    announced = private ^ flips
    if announced.ndim == 0:
        return int(np.asarray(public_bits)), int(announced)
    return np.asarray(public_bits, dtype=np.int8), announced


class ChannelModel:
    """Precomputed outcome distributions for every setting/basis combination.

    ``measure`` is the single sampling path shared by the in-process quantum
    stage and the networked channel emulator, so both consume the channel
    stream in the same order: Eve's bases and coins (intercept only), one
    measurement uniform per round, then the two loss uniforms.
    """

    def __init__(self, channel: ChannelSpec, adversary: AdversarySpec | None = None):
        self.channel = channel
        self.adversary = adversary or AdversarySpec()
        self.arm = self.adversary.intercept_arm
        v = channel.visibility
        # direct[S, s, A, B] -> length-4 distribution
        self.direct = np.empty((2, 2, 2, 2, 4))
        # eve_plus[S, s, e]; post[S, s, e, o, A, B] -> length-4 distribution
        self.eve_plus = np.zeros((2, 2, 2))
        self.post = np.full((2, 2, 2, 2, 2, 2, 4), 0.25)
        for S in SourceBasis:
            for s in Sign:
                rho = apply_depolarizing(make_source_state(SourceSetting(S, s)).density(), v)
                for A in MeasBasis:
                    for B in MeasBasis:
                        self.direct[S.value, s.value, A.value, B.value] = joint_probability_vector(rho, A, B)
                if self.arm is None:
                    continue
                for e in MeasBasis:
                    for o in Sign:
                        try:
                            p, post = intercept_resend(rho, self.arm, e, o)
                        except ImpossibleBranchError:
                            continue
                        if o is Sign.PLUS:
                            self.eve_plus[S.value, s.value, e.value] = p
                        for A in MeasBasis:
                            for B in MeasBasis:
                                self.post[S.value, s.value, e.value, o.value, A.value, B.value] = (
                                    joint_probability_vector(post, A, B)
                                )

    def measure(self, S, s, A, B, rng: np.random.Generator):
        """Sample outcomes for a batch of rounds.

        Returns ``(a, b, detected_a, detected_b)``; outcome arrays hold sign
        codes 0/1 for every round, loss flags are applied by the caller.
        """
        S, s, A, B = (np.asarray(x, dtype=np.intp) for x in (S, s, A, B))
        n = S.size
        if self.arm is None:
            rows = self.direct[S, s, A, B]
        else:
            e = rng.integers(0, 2, size=n)
            o = (rng.random(n) >= self.eve_plus[S, s, e]).astype(np.intp)
            rows = self.post[S, s, e, o, A, B]
        k = sample_outcome_indices(rows, rng.random(n))
        det_a, det_b = apply_loss(rng, self.channel.loss_a, self.channel.loss_b, size=n)
        return (k >> 1).astype(np.int8), (k & 1).astype(np.int8), det_a, det_b
