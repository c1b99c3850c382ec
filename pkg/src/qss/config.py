"""Session configuration (JSON file and CLI flags)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .channel import AdversarySpec, AdversaryStrategy, ChannelSpec, DEFAULT_VISIBILITY
from .postprocess import DEFAULT_PASSES, DEFAULT_SECURITY_MARGIN
from .protocol import DEFAULT_ESTIMATION_FRACTION
from .roles import PARTICIPANTS, Role

FAULTS = ("early_reveal",)
# fields that do not change the protocol run and stay out of the session digest
_LOCAL_FIELDS = ("output", "fault", "timeout")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SessionConfig:
    rounds: int = 100_000
    seed: int = 0
    visibility: float = DEFAULT_VISIBILITY
    loss_a: float = 0.0
    loss_b: float = 0.0
    adversary: str = "none"
    lie_probability: float = 0.0
    dishonest_player: str | None = None
    dealer: str = "sara"
    estimation_fraction: float = DEFAULT_ESTIMATION_FRACTION
    security_margin: int = DEFAULT_SECURITY_MARGIN
    reconciliation_passes: int = DEFAULT_PASSES
    basis_bias: float = 0.5
    audit: bool = False
    output: str | None = None
    fault: str | None = None
    timeout: float = 30.0

    def __post_init__(self) -> None:
        if not isinstance(self.rounds, int) or self.rounds < 1:
            raise ConfigError(f"rounds must be a positive integer, got {self.rounds!r}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        for name in ("visibility", "loss_a", "loss_b", "lie_probability", "basis_bias"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v!r}")
        if not 0.0 < self.estimation_fraction < 1.0:
            raise ConfigError(f"estimation_fraction must lie in (0, 1), got {self.estimation_fraction!r}")
        if not isinstance(self.security_margin, int) or self.security_margin < 0:
            raise ConfigError("security_margin must be a non-negative integer")
        if not isinstance(self.reconciliation_passes, int) or self.reconciliation_passes < 1:
            raise ConfigError("reconciliation_passes must be a positive integer")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")
        try:
            AdversaryStrategy(self.adversary)
            dealer = Role.parse(self.dealer)
            liar = Role.parse(self.dishonest_player) if self.dishonest_player else None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if dealer not in PARTICIPANTS:
            raise ConfigError("dealer must be sara, alice or bob")
        if liar is not None and (liar is dealer or liar not in PARTICIPANTS):
            raise ConfigError("dishonest_player must be one of the two players")
        if self.fault is not None and self.fault not in FAULTS:
            raise ConfigError(f"unknown fault {self.fault!r}; known: {', '.join(FAULTS)}")

    @property
    def dealer_role(self) -> Role:
        return Role.parse(self.dealer)

    @property
    def channel(self) -> ChannelSpec:
        return ChannelSpec(self.visibility, self.loss_a, self.loss_b)

    @property
    def adversary_spec(self) -> AdversarySpec:
        player = Role.parse(self.dishonest_player) if self.dishonest_player else None
        return AdversarySpec(AdversaryStrategy(self.adversary), self.lie_probability, player)

    def to_dict(self) -> dict:
        return asdict(self)

    def protocol_dict(self) -> dict:
        """The fields every party must agree on."""
        return {k: v for k, v in asdict(self).items() if k not in _LOCAL_FIELDS}

    def digest(self) -> str:
        body = json.dumps(self.protocol_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(body.encode()).hexdigest()

    @property
    def session_id(self) -> str:
        return self.digest()[:16]

    def replace(self, **changes) -> "SessionConfig":
        d = self.to_dict()
        d.update(changes)
        return SessionConfig.from_dict(d)

    @classmethod
    def from_dict(cls, data: dict) -> "SessionConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def loads(cls, text: str) -> "SessionConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> "SessionConfig":
        text = Path(path).read_text()
        try:
            return cls.loads(text)
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())
