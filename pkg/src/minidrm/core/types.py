"""Core data models for minidrm."""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Union

from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.wire import Kind, MessageType, WireMessage, wire

KEY_ID_SIZE = 16
KEY_SEED_SIZE = 30
CONTENT_KEY_SIZE = 16
DEVICE_ID_SIZE = 32


@dataclass(frozen=True)
class KeyId:
    """Opaque 16-byte key identifier carried in manifests and licenses.

    Attributes:
        id: Identifier bytes
    """

    id: bytes

    def __post_init__(self) -> None:
        """Validate identifier length."""
        if not isinstance(self.id, (bytes, bytearray)):
            raise TypeError(f"KeyId must be bytes, got {type(self.id).__name__}")
        object.__setattr__(self, "id", bytes(self.id))
        if len(self.id) != KEY_ID_SIZE:
            raise ValueError(f"KeyId must be {KEY_ID_SIZE} bytes, got {len(self.id)}")

    def __bytes__(self) -> bytes:
        return self.id

    def hex(self) -> str:
        return self.id.hex()

    def __repr__(self) -> str:
        return f"KeyId({self.id.hex()})"


@dataclass(frozen=True)
class KeySeed:
    """30-byte seed from which content keys are derived.

    Attributes:
        seed: Seed bytes (never shown in repr)
    """

    seed: bytes = field(repr=False)

    def __post_init__(self) -> None:
        """Validate seed length."""
        if len(self.seed) != KEY_SEED_SIZE:
            raise DrmError(
                ErrorCode.SEED_LENGTH,
                f"key seed must be {KEY_SEED_SIZE} bytes, got {len(self.seed)}",
            )
        object.__setattr__(self, "seed", bytes(self.seed))


@dataclass(frozen=True)
class ContentKey:
    """AES-128 content key bound to one crypto-period.

    Attributes:
        key_id: Identifier announced in the manifest
        key: 16 secret bytes (never shown in repr)
        period: Crypto-period index
    """

    key_id: KeyId
    key: bytes = field(repr=False)
    period: int = 0

    def __post_init__(self) -> None:
        """Validate key length and period."""
        if len(self.key) != CONTENT_KEY_SIZE:
            raise ValueError(f"Content key must be {CONTENT_KEY_SIZE} bytes, got {len(self.key)}")
        if self.period < 0:
            raise ValueError(f"Crypto-period must be non-negative, got {self.period}")


class SecurityLevel(IntEnum):
    """Client robustness level, ordered DEV < SOFTWARE < HARDWARE."""

    DEV = 1
    SOFTWARE = 2
    HARDWARE = 3

    @classmethod
    def parse(cls, value: Union[str, int]) -> "SecurityLevel":
        """Accept a member, its integer value or its case-insensitive name."""
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ValueError(f"Unknown security level: {value}") from None
        return cls(value)


@dataclass(frozen=True)
class ClientCertificate(WireMessage):
    """Device certificate issued by the root at manufacture.

    Attributes:
        client_public_key: Signature verification key of the device vault
        client_kem_key: KEM public key licenses are wrapped to
        security_level: Robustness level of the device
        device_id: HASH(client_public_key), the anonymous device identifier
        suite: Name of the crypto suite the keys belong to
        domain_id: Identifier of the domain the device joined, if any
        domain_kem_key: KEM public key of that domain
        issuer_signature: Root signature over all preceding fields
    """

    TYPE_TAG = MessageType.CLIENT_CERT

    client_public_key: bytes = wire(1, Kind.BYTES)
    client_kem_key: bytes = wire(2, Kind.BYTES)
    security_level: SecurityLevel = wire(3, Kind.ENUM, of=SecurityLevel)
    device_id: bytes = wire(4, Kind.BYTES)
    suite: str = wire(5, Kind.STR)
    issuer_signature: bytes = wire(255, Kind.BYTES)
    domain_id: Optional[bytes] = wire(6, Kind.BYTES, optional=True)
    domain_kem_key: Optional[bytes] = wire(7, Kind.BYTES, optional=True)

    def __post_init__(self) -> None:
        super().__post_init__()
        if len(self.device_id) != DEVICE_ID_SIZE:
            raise ValueError(f"device_id must be {DEVICE_ID_SIZE} bytes, got {len(self.device_id)}")
        if (self.domain_id is None) != (self.domain_kem_key is None):
            raise ValueError("domain_id and domain_kem_key must be given together")


@dataclass(frozen=True)
class ServerCertificate(WireMessage):
    """License server certificate issued by the root.

    Attributes:
        server_public_key: Verification key for CKC and lease signatures
        server_kem_key: KEM public key session keys are encapsulated to
        not_after: Expiry timestamp in seconds; invalid once now >= not_after
        suite: Name of the crypto suite the keys belong to
        issuer_signature: Root signature over all preceding fields
    """

    TYPE_TAG = MessageType.SERVER_CERT

    server_public_key: bytes = wire(1, Kind.BYTES)
    server_kem_key: bytes = wire(2, Kind.BYTES)
    not_after: int = wire(3, Kind.UINT)
    suite: str = wire(4, Kind.STR)
    issuer_signature: bytes = wire(255, Kind.BYTES)


@dataclass(frozen=True)
class AttestationReport(WireMessage):
    """Signed statement of a vault about itself, echoing a freshness nonce."""

    TYPE_TAG = MessageType.ATTESTATION

    security_level: SecurityLevel = wire(1, Kind.ENUM, of=SecurityLevel)
    protocol_version: int = wire(2, Kind.U16)
    nonce: bytes = wire(3, Kind.BYTES)
    device_id: bytes = wire(4, Kind.BYTES)
    vault_signature: bytes = wire(255, Kind.BYTES)
