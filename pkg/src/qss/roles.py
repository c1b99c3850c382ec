from __future__ import annotations

from enum import Enum


class Role(Enum):
    SARA = "sara"
    ALICE = "alice"
    BOB = "bob"
    CHANNEL_EMULATOR = "channel"

    @classmethod
    def parse(cls, text: str) -> "Role":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown role {text!r}") from None


PARTICIPANTS = (Role.SARA, Role.ALICE, Role.BOB)


def players_for(dealer: Role) -> tuple[Role, Role]:
    """(player 1, player 2) for a dealer, in fixed Sara/Alice/Bob order.

    Player 2 is the combiner who ends up holding the joint string.
    """
    if dealer not in PARTICIPANTS:
        raise ValueError(f"{dealer} cannot be the dealer")
    p1, p2 = (r for r in PARTICIPANTS if r is not dealer)
    return p1, p2
