"""Playback session state machine."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, FrozenSet, List, Optional

from minidrm.packager.manifest import SegmentRecord, SignedManifest
from minidrm.tee.vault import InstallReceipt, SessionHandle


class SessionState(str, Enum):
    INIT = "init"
    LICENSED = "licensed"
    PLAYING = "playing"
    EXPIRED_PENDING = "expired_pending"
    STOPPED = "stopped"


# Declared transition relation; anything else is a bug.
TRANSITIONS: Dict[SessionState, FrozenSet[SessionState]] = {
    SessionState.INIT: frozenset({SessionState.LICENSED, SessionState.STOPPED}),
    SessionState.LICENSED: frozenset(
        {SessionState.LICENSED, SessionState.PLAYING, SessionState.STOPPED}
    ),
    SessionState.PLAYING: frozenset(
        {SessionState.LICENSED, SessionState.EXPIRED_PENDING, SessionState.STOPPED}
    ),
    SessionState.EXPIRED_PENDING: frozenset({SessionState.LICENSED, SessionState.STOPPED}),
    SessionState.STOPPED: frozenset(),
}

SegmentFetcher = Callable[[SegmentRecord], bytes]


@dataclass
class PendingRequest:
    """Vault handle and anti-replay seed of an outstanding license request."""

    handle: SessionHandle
    anti_replay_seed: bytes
    secure_content_id: bytes


@dataclass
class PlaybackSession:
    """One content being played by one client.

    Attributes:
        content_id: Content identifier from the manifest
        manifest: Verified manifest
        fetch: Callable returning the sealed bytes of a segment record
        secure_content_id: HASH(content_id) as sent to the server
        state: Current state
        receipt: Installed license (KeyIds and policy, never keys)
        auth_token: Token used for the license, reused for leases and metering
        pending: Outstanding license request, if any
        history: Every state entered, in order
    """

    content_id: str
    manifest: SignedManifest
    fetch: Optional[SegmentFetcher]
    secure_content_id: bytes
    state: SessionState = SessionState.INIT
    receipt: Optional[InstallReceipt] = None
    auth_token: Optional[str] = None
    pending: Optional[PendingRequest] = None
    history: List[SessionState] = field(default_factory=lambda: [SessionState.INIT])

    def transition(self, new_state: SessionState) -> None:
        """Move to ``new_state``.

        Raises
        ------
        ValueError
            If the move is not in the declared transition relation
        """
        if new_state not in TRANSITIONS[self.state]:
            raise ValueError(f"Illegal session transition {self.state.value} -> {new_state.value}")
        self.state = new_state
        self.history.append(new_state)

    @property
    def mode(self) -> Optional[str]:
        return self.receipt.policy.mode.name if self.receipt is not None else None

    @property
    def lease_slot_token(self) -> Optional[bytes]:
        return self.receipt.lease_slot_token if self.receipt is not None else None

    @property
    def expiry(self) -> Optional[int]:
        return self.receipt.expiry if self.receipt is not None else None
