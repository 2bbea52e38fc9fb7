"""Signed manifest and the per-segment encryption layout.

Each segment is sealed under its crypto-period's content key with the nonce
``period u32 ‖ index u64`` and associated data
``encode(SegmentBinding(content_id, index, key_id))``.
"""

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, Tuple

from minidrm.core.crypto import CryptoSuite
from minidrm.core.keys import open_signed
from minidrm.core.types import KeyId
from minidrm.core.wire import Kind, MessageType, WireMessage, decode, encode, item, wire

_NONCE = struct.Struct(">IQ")


class EncryptionScheme(IntEnum):
    """How segments are protected; PLAIN_CTR exists only as a test fixture."""

    AEAD = 1
    PLAIN_CTR = 2


@dataclass(frozen=True)
class SegmentRecord(WireMessage):
    """Manifest entry describing one sealed segment."""

    index: int = wire(1, Kind.UINT)
    period: int = wire(2, Kind.UINT)
    key_id: KeyId = wire(3, Kind.BYTES, of=KeyId)
    nonce: bytes = wire(4, Kind.BYTES)
    uri: str = wire(5, Kind.STR)
    ciphertext_digest: bytes = wire(6, Kind.BYTES)


@dataclass(frozen=True)
class PeriodKey(WireMessage):
    period: int = wire(1, Kind.UINT)
    key_id: KeyId = wire(2, Kind.BYTES, of=KeyId)


@dataclass(frozen=True)
class SignedManifest(WireMessage):
    """Content map: segments, crypto-periods and the KeyIds that protect them.

    ``key_ids_per_period`` is kept sorted by period, so equal manifests have
    equal encodings whatever order the entries were supplied in.
    """

    TYPE_TAG = MessageType.MANIFEST

    content_id: str = wire(1, Kind.STR)
    scheme: EncryptionScheme = wire(2, Kind.ENUM, of=EncryptionScheme)
    rotation_interval: int = wire(3, Kind.UINT)
    segments: Tuple[SegmentRecord, ...] = wire(
        4, Kind.LIST, element=item(Kind.MESSAGE, SegmentRecord)
    )
    key_ids_per_period: Tuple[PeriodKey, ...] = wire(
        5, Kind.LIST, element=item(Kind.MESSAGE, PeriodKey)
    )
    init_data: bytes = wire(6, Kind.BYTES)
    publisher_signature: bytes = wire(255, Kind.BYTES)

    def __post_init__(self) -> None:
        super().__post_init__()
        ordered = tuple(sorted(self.key_ids_per_period, key=lambda pk: pk.period))
        object.__setattr__(self, "key_ids_per_period", ordered)

        if not self.content_id:
            raise ValueError("content_id must not be empty")
        if self.rotation_interval < 1:
            raise ValueError(f"rotation_interval must be >= 1, got {self.rotation_interval}")
        periods = [pk.period for pk in ordered]
        if len(set(periods)) != len(periods):
            raise ValueError("duplicate crypto-period in key_ids_per_period")
        mapping = self.period_keys()
        for position, record in enumerate(self.segments):
            if record.index != position:
                raise ValueError(f"segment {position} carries index {record.index}")
            if record.period != record.index // self.rotation_interval:
                raise ValueError(f"segment {position} is in the wrong crypto-period")
            if mapping.get(record.period) != record.key_id:
                raise ValueError(f"segment {position} key_id does not match its period")

    def period_keys(self) -> Dict[int, KeyId]:
        return {pk.period: pk.key_id for pk in self.key_ids_per_period}

    @property
    def key_ids(self) -> Tuple[KeyId, ...]:
        return tuple(pk.key_id for pk in self.key_ids_per_period)


@dataclass(frozen=True)
class InitData(WireMessage):
    """Data a client needs to start a license request."""

    TYPE_TAG = MessageType.INIT_DATA

    content_id: str = wire(1, Kind.STR)
    key_ids: Tuple[KeyId, ...] = wire(2, Kind.LIST, element=item(Kind.BYTES, KeyId))


@dataclass(frozen=True)
class SegmentBinding(WireMessage):
    """Associated data of a sealed segment."""

    TYPE_TAG = MessageType.SEGMENT_BINDING

    content_id: str = wire(1, Kind.STR)
    index: int = wire(2, Kind.UINT)
    key_id: KeyId = wire(3, Kind.BYTES, of=KeyId)


def segment_nonce(period: int, index: int) -> bytes:
    """96-bit nonce ``period u32 ‖ index u64``; unique within a package."""
    return _NONCE.pack(period, index)


def segment_ad(content_id: str, index: int, key_id: KeyId) -> bytes:
    return encode(SegmentBinding(content_id=content_id, index=index, key_id=key_id))


def decode_init_data(data: bytes) -> InitData:
    return decode(data, InitData)


def verify_manifest(
    manifest_bytes: bytes, publisher_verification_key: bytes, suite: CryptoSuite
) -> SignedManifest:
    """Return the manifest only if its publisher signature verifies.

    The signature is checked over the exact body bytes before any semantic
    field is decoded.

    Raises
    ------
    DrmError
        ``BAD_SIGNATURE`` on tampering or a foreign key, ``MALFORMED`` on an
        envelope or framing violation
    """
    return open_signed(manifest_bytes, SignedManifest, publisher_verification_key, suite)
