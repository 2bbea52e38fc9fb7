"""License protocol messages shared by client, server and vault.

The byte layout of every structure here is an original design of this
project; it is not compatible with any commercial DRM system.
"""

from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Tuple

from minidrm.core.types import AttestationReport, ClientCertificate, KeyId, SecurityLevel
from minidrm.core.wire import Kind, MessageType, WireMessage, item, wire

PROTOCOL_VERSIONS: Tuple[int, ...] = (1, 2, 3)
CURRENT_PROTOCOL_VERSION = 3
ANTI_REPLAY_SEED_SIZE = 16
SESSION_KEY_SIZE = 16

# HKDF labels
SESSION_KEY_LABEL = b"minidrm/session/v1"
WRAP_KEY_LABEL = b"minidrm/wrap/v1"


def wrapped_key_ad(key_id: KeyId, period: int) -> bytes:
    """Associated data of one wrapped content key."""
    return bytes(key_id) + period.to_bytes(8, "big")


class LicenseMode(IntEnum):
    """Key expiration model of a license."""

    RENTAL = 1
    LEASE = 2
    PERSISTENT = 3


class LeaseAction(IntEnum):
    RENEW = 1
    RELEASE = 2


class MeteringEvent(IntEnum):
    LICENSE_ISSUED = 1
    PLAYBACK_START = 2
    PLAYBACK_STOP = 3
    LEASE_RENEWED = 4


@dataclass(frozen=True)
class LicensePolicy(WireMessage):
    """Usage rules attached to a license.

    Attributes:
        mode: RENTAL, LEASE or PERSISTENT
        expiry: Expiry in the client's time reference (exclusive)
        persistent: Whether the license may be stored for offline playback
        min_security_level: Lowest client level allowed to hold the keys
        max_concurrent: Lease slot capacity of the account
    """

    mode: LicenseMode = wire(1, Kind.ENUM, of=LicenseMode)
    expiry: int = wire(2, Kind.UINT)
    persistent: bool = wire(3, Kind.BOOL)
    min_security_level: SecurityLevel = wire(4, Kind.ENUM, of=SecurityLevel)
    max_concurrent: int = wire(5, Kind.UINT)

    def expired(self, now: int) -> bool:
        return now >= self.expiry


@dataclass(frozen=True)
class Spc(WireMessage):
    """License request (server playback context)."""

    TYPE_TAG = MessageType.SPC

    session_key_encap: bytes = wire(1, Kind.BYTES)
    anti_replay_seed: bytes = wire(2, Kind.BYTES)
    secure_content_id: bytes = wire(3, Kind.BYTES)
    key_ids: Tuple[KeyId, ...] = wire(4, Kind.LIST, element=item(Kind.BYTES, KeyId))
    client_time_reference: int = wire(5, Kind.UINT)
    client_certificate: ClientCertificate = wire(6, Kind.MESSAGE, of=ClientCertificate)
    supported_versions: Tuple[int, ...] = wire(7, Kind.LIST, element=item(Kind.U16))
    auth_token: str = wire(8, Kind.STR)
    attestation: AttestationReport = wire(9, Kind.MESSAGE, of=AttestationReport)
    request_signature: bytes = wire(255, Kind.BYTES)

    def __post_init__(self) -> None:
        super().__post_init__()
        if len(self.anti_replay_seed) != ANTI_REPLAY_SEED_SIZE:
            raise ValueError(f"anti_replay_seed must be {ANTI_REPLAY_SEED_SIZE} bytes")


@dataclass(frozen=True)
class CkcBinding(WireMessage):
    """Associated data binding a sealed license body to its request."""

    TYPE_TAG = MessageType.CKC_BINDING

    secure_content_id: bytes = wire(1, Kind.BYTES)
    anti_replay_seed: bytes = wire(2, Kind.BYTES)


@dataclass(frozen=True)
class Ckc(WireMessage):
    """License response: body sealed under the session key, then signed."""

    TYPE_TAG = MessageType.CKC

    nonce: bytes = wire(1, Kind.BYTES)
    sealed_body: bytes = wire(2, Kind.BYTES)
    server_signature: bytes = wire(255, Kind.BYTES)


@dataclass(frozen=True)
class WrappedKey(WireMessage):
    """One content key sealed under the recipient's wrap key."""

    key_id: KeyId = wire(1, Kind.BYTES, of=KeyId)
    period: int = wire(2, Kind.UINT)
    nonce: bytes = wire(3, Kind.BYTES)
    sealed_key: bytes = wire(4, Kind.BYTES)


@dataclass(frozen=True)
class LicenseBody(WireMessage):
    """Plaintext of ``Ckc.sealed_body``; only the vault ever opens it."""

    TYPE_TAG = MessageType.LICENSE_BODY

    secure_content_id: bytes = wire(1, Kind.BYTES)
    anti_replay_seed: bytes = wire(2, Kind.BYTES)
    recipient_id: bytes = wire(3, Kind.BYTES)
    key_wrap_encap: bytes = wire(4, Kind.BYTES)
    wrapped_keys: Tuple[WrappedKey, ...] = wire(
        5, Kind.LIST, element=item(Kind.MESSAGE, WrappedKey)
    )
    policy: LicensePolicy = wire(6, Kind.MESSAGE, of=LicensePolicy)
    protocol_version: int = wire(7, Kind.U16)
    server_time: int = wire(8, Kind.UINT)
    lease_slot_token: Optional[bytes] = wire(9, Kind.BYTES, optional=True)
    lease_expiry: Optional[int] = wire(10, Kind.UINT, optional=True)


@dataclass(frozen=True)
class LeaseRequest(WireMessage):
    """Signed renew or release of a lease slot."""

    TYPE_TAG = MessageType.LEASE_REQUEST

    secure_content_id: bytes = wire(1, Kind.BYTES)
    slot_token: bytes = wire(2, Kind.BYTES)
    action: LeaseAction = wire(3, Kind.ENUM, of=LeaseAction)
    auth_token: str = wire(4, Kind.STR)
    client_certificate: ClientCertificate = wire(5, Kind.MESSAGE, of=ClientCertificate)
    client_time: int = wire(6, Kind.UINT)
    request_signature: bytes = wire(255, Kind.BYTES)


@dataclass(frozen=True)
class LeaseRenewal(WireMessage):
    """Server-signed new lease expiry."""

    TYPE_TAG = MessageType.LEASE_RENEWAL

    secure_content_id: bytes = wire(1, Kind.BYTES)
    slot_token: bytes = wire(2, Kind.BYTES)
    lease_expiry: int = wire(3, Kind.UINT)
    server_time: int = wire(4, Kind.UINT)
    server_signature: bytes = wire(255, Kind.BYTES)


@dataclass(frozen=True)
class LeaseReleased(WireMessage):
    TYPE_TAG = MessageType.LEASE_RELEASED

    secure_content_id: bytes = wire(1, Kind.BYTES)
    slot_token: bytes = wire(2, Kind.BYTES)
    server_signature: bytes = wire(255, Kind.BYTES)


@dataclass(frozen=True)
class MeteringReport(WireMessage):
    """Client-signed playback event."""

    TYPE_TAG = MessageType.METERING_REPORT

    secure_content_id: bytes = wire(1, Kind.BYTES)
    event: MeteringEvent = wire(2, Kind.ENUM, of=MeteringEvent)
    auth_token: str = wire(3, Kind.STR)
    client_certificate: ClientCertificate = wire(4, Kind.MESSAGE, of=ClientCertificate)
    client_time: int = wire(5, Kind.UINT)
    request_signature: bytes = wire(255, Kind.BYTES)


@dataclass(frozen=True)
class ErrorEnvelope(WireMessage):
    """Error answer of the license service."""

    TYPE_TAG = MessageType.ERROR

    code: int = wire(1, Kind.U16)
    message: str = wire(2, Kind.STR)
