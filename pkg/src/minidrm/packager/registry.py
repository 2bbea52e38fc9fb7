"""Key registry handed from the packager to the license server.

Content keys only ever leave the packager inside ``sealed_for_transport``,
an AEAD blob under the static packager/server transport key.
"""

from dataclasses import dataclass, field
from typing import Dict, Tuple

from minidrm.core.crypto import CryptoSuite
from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.types import ContentKey, KeyId
from minidrm.core.wire import Kind, MessageType, WireMessage, decode, encode, item, wire


@dataclass(frozen=True)
class RegistryEntry(WireMessage):
    key_id: KeyId = wire(1, Kind.BYTES, of=KeyId)
    period: int = wire(2, Kind.UINT)
    key: bytes = wire(3, Kind.BYTES, secret=True)


@dataclass(frozen=True)
class RegistryPayload(WireMessage):
    """Plaintext of the sealed registry."""

    TYPE_TAG = MessageType.KEY_REGISTRY

    content_id: str = wire(1, Kind.STR)
    entries: Tuple[RegistryEntry, ...] = wire(
        2, Kind.LIST, element=item(Kind.MESSAGE, RegistryEntry)
    )


@dataclass(frozen=True)
class SealedRegistry(WireMessage):
    """On-disk and in-transit form of the registry (``registry.sealed``)."""

    TYPE_TAG = MessageType.SEALED_REGISTRY

    content_id: str = wire(1, Kind.STR)
    nonce: bytes = wire(2, Kind.BYTES)
    ciphertext: bytes = wire(3, Kind.BYTES)


def _registry_ad(content_id: str) -> bytes:
    return b"minidrm/registry/v1|" + content_id.encode("utf-8")


@dataclass(frozen=True)
class KeyRegistry:
    """Content keys of one package plus their sealed transport form.

    Attributes
    ----------
    content_id : str
        Content the keys protect
    entries : tuple of ContentKey
        One key per crypto-period, ordered by period
    sealed_for_transport : bytes
        Encoded ``SealedRegistry``
    """

    content_id: str
    entries: Tuple[ContentKey, ...] = field(repr=False)
    sealed_for_transport: bytes = field(repr=False)

    def __post_init__(self) -> None:
        ids = [k.key_id for k in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate key_id in registry")
        periods = [k.period for k in self.entries]
        if len(set(periods)) != len(periods):
            raise ValueError("key_id to period mapping must be injective")

    def by_key_id(self) -> Dict[KeyId, ContentKey]:
        return {k.key_id: k for k in self.entries}

    @classmethod
    def seal(
        cls,
        content_id: str,
        keys: Tuple[ContentKey, ...],
        transport_key: bytes,
        suite: CryptoSuite,
    ) -> "KeyRegistry":
        """Build a registry and seal it under ``transport_key``."""
        ordered = tuple(sorted(keys, key=lambda k: k.period))
        payload = RegistryPayload(
            content_id=content_id,
            entries=tuple(
                RegistryEntry(key_id=k.key_id, period=k.period, key=k.key) for k in ordered
            ),
        )
        nonce = suite.random_nonce()
        ad = _registry_ad(content_id)
        ciphertext = suite.aead.seal(transport_key, nonce, ad, encode(payload))
        sealed = SealedRegistry(content_id=content_id, nonce=nonce, ciphertext=ciphertext)
        return cls(content_id=content_id, entries=ordered, sealed_for_transport=encode(sealed))


def open_registry(sealed: bytes, transport_key: bytes, suite: CryptoSuite) -> KeyRegistry:
    """Open a sealed registry on the license server side.

    Raises
    ------
    DrmError
        ``MALFORMED`` for a damaged envelope, ``OPEN_FAILED`` if the
        transport key is wrong or the blob was modified
    """
    box = decode(sealed, SealedRegistry)
    plaintext = suite.aead.open(
        transport_key, box.nonce, _registry_ad(box.content_id), box.ciphertext
    )
    payload = decode(plaintext, RegistryPayload)
    if payload.content_id != box.content_id:
        raise DrmError(ErrorCode.OPEN_FAILED, "registry content_id mismatch")
    keys = tuple(ContentKey(key_id=e.key_id, key=e.key, period=e.period) for e in payload.entries)
    return KeyRegistry(content_id=payload.content_id, entries=keys, sealed_for_transport=sealed)
