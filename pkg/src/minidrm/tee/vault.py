"""Emulated trusted execution environment.

``TeeVault`` is the only object that ever holds content keys or session keys
in the clear. Callers get opaque handles, KeyIds, receipts and byte counts
back; decrypted segments go straight into a ``DisplaySink``.
"""

import logging
import secrets
import threading
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

from minidrm.core.crypto import CryptoSuite
from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.keys import KeyPair, device_id_for, open_signed, sign_detached, sign_message
from minidrm.core.logs import log_event
from minidrm.core.messages import (
    CURRENT_PROTOCOL_VERSION,
    SESSION_KEY_LABEL,
    SESSION_KEY_SIZE,
    WRAP_KEY_LABEL,
    CkcBinding,
    LeaseRenewal,
    LicenseBody,
    LicenseMode,
    LicensePolicy,
    wrapped_key_ad,
)
from minidrm.core.types import AttestationReport, KeyId, SecurityLevel
from minidrm.core.wire import Kind, MessageType, WireMessage, decode, encode, item, wire
from minidrm.packager.manifest import EncryptionScheme, SegmentRecord, segment_ad
from minidrm.tee.sink import DisplaySink

logger = logging.getLogger(__name__)

HDS_LABEL = b"minidrm/hds/v1"


@dataclass
class VaultEntry:
    """Installed content key; lives only inside the vault."""

    key_id: KeyId
    key: bytearray = field(repr=False)
    period: int
    expiry: int
    mode: LicenseMode
    persistent: bool
    installed_at: int
    secure_content_id: bytes
    lease_slot_token: Optional[bytes] = None

    def zeroize(self) -> None:
        for i in range(len(self.key)):
            self.key[i] = 0


@dataclass(frozen=True)
class SessionHandle:
    """Opaque reference to a session key held by the vault."""

    id: str


@dataclass(frozen=True)
class PlaybackGrant:
    """Result of an expiry check made once at playback start."""

    id: str
    key_ids: FrozenSet[KeyId]
    opened_at: int


@dataclass(frozen=True)
class InstallReceipt:
    """What a caller learns about an installed license.

    Attributes:
        secure_content_id: Content the keys belong to
        key_ids: Installed KeyIds (never the keys)
        policy: Usage rules of the license
        protocol_version: Version the server answered with
        server_time: Server clock echo
        lease_slot_token: Slot token for LEASE licenses
        lease_expiry: Current lease expiry for LEASE licenses
        debug_keys: Raw keys, only ever set by a vault built with ``debug_export``
    """

    secure_content_id: bytes
    key_ids: Tuple[KeyId, ...]
    policy: LicensePolicy
    protocol_version: int
    server_time: int
    lease_slot_token: Optional[bytes] = None
    lease_expiry: Optional[int] = None
    debug_keys: Optional[Tuple[bytes, ...]] = None

    @property
    def expiry(self) -> int:
        if self.policy.mode is LicenseMode.LEASE and self.lease_expiry is not None:
            return self.lease_expiry
        return self.policy.expiry


@dataclass(frozen=True)
class PersistedKey(WireMessage):
    key_id: KeyId = wire(1, Kind.BYTES, of=KeyId)
    period: int = wire(2, Kind.UINT)
    key: bytes = wire(3, Kind.BYTES, secret=True)


@dataclass(frozen=True)
class PersistentContext(WireMessage):
    """Plaintext of an offline record; never leaves the vault unsealed."""

    TYPE_TAG = MessageType.PERSISTENT_CONTEXT

    secure_content_id: bytes = wire(1, Kind.BYTES)
    policy: LicensePolicy = wire(2, Kind.MESSAGE, of=LicensePolicy)
    keys: Tuple[PersistedKey, ...] = wire(3, Kind.LIST, element=item(Kind.MESSAGE, PersistedKey))
    protocol_version: int = wire(4, Kind.U16)


@dataclass(frozen=True)
class OfflineRecord(WireMessage):
    """Sealed persistent play context as stored on disk."""

    TYPE_TAG = MessageType.OFFLINE_RECORD

    content_id: str = wire(1, Kind.STR)
    device_id: bytes = wire(2, Kind.BYTES)
    nonce: bytes = wire(3, Kind.BYTES)
    ciphertext: bytes = wire(4, Kind.BYTES)
    expiry: int = wire(5, Kind.UINT)


def _offline_ad(content_id: str, device_id: bytes) -> bytes:
    return content_id.encode("utf-8") + b"|" + device_id


class TeeVault:
    """Key vault with a narrow call interface.

    Parameters
    ----------
    identity : KeyPair
        Device identity (client or vault role) provisioned at manufacture
    suite : CryptoSuite
        Crypto suite of the identity
    enforce_expiry : bool, default True
        Refuse expired keys and let ``dispose_expired`` remove them. Only the
        ``no_expiry_enforcement`` conformance fixture turns this off.
    debug_export : bool, default False
        Log installed keys and return them in receipts. Only the
        ``leaky_vault`` conformance fixture turns this on.

    Examples
    --------
    >>> vault = TeeVault(client_identity, suite)
    >>> handle, encap = vault.begin_key_exchange(server_cert.server_kem_key)
    """

    def __init__(
        self,
        identity: KeyPair,
        suite: CryptoSuite,
        enforce_expiry: bool = True,
        debug_export: bool = False,
    ):
        if identity.suite != suite.name:
            raise DrmError(
                ErrorCode.CONFIG, f"identity belongs to suite {identity.suite}, not {suite.name}"
            )
        self._suite = suite
        self._sign_private = identity.require("sign_private")
        self._sign_public = identity.require("sign_public")
        self._kem_private = identity.require("kem_private")
        self._domain_kem_private = identity.domain_kem_private
        self._domain_id = identity.domain_id
        cert = identity.client_certificate
        self.security_level = cert.security_level if cert is not None else SecurityLevel.SOFTWARE
        self.device_id = device_id_for(self._sign_public, suite)
        self.enforce_expiry = enforce_expiry
        self.debug_export = debug_export

        self._lock = threading.RLock()
        self._entries: Dict[KeyId, VaultEntry] = {}
        self._sessions: Dict[str, bytearray] = {}
        self._grants: Dict[str, PlaybackGrant] = {}
        self._licenses: Dict[bytes, InstallReceipt] = {}

    # ------------------------------------------------------------------
    # key exchange and signing
    # ------------------------------------------------------------------

    def begin_key_exchange(self, server_kem_public_key: bytes) -> Tuple[SessionHandle, bytes]:
        """Create a fresh session key encapsulated to the server.

        Returns
        -------
        tuple
            ``(handle, encapsulation)``; the session key stays in the vault
        """
        ciphertext, shared = self._suite.kem.encap(server_kem_public_key)
        session_key = self._suite.derive(shared, SESSION_KEY_LABEL, SESSION_KEY_SIZE)
        handle = SessionHandle(id=secrets.token_hex(8))
        with self._lock:
            self._sessions[handle.id] = bytearray(session_key)
        return handle, ciphertext

    def close_session(self, handle: SessionHandle) -> None:
        """Invalidate ``handle``; unknown handles are ignored."""
        with self._lock:
            key = self._sessions.pop(handle.id, None)
            if key is not None:
                key[:] = bytes(len(key))

    def sign_request(self, payload: bytes) -> bytes:
        return sign_detached(payload, self._sign_private, self._suite)

    def attest(self, nonce: bytes) -> AttestationReport:
        """Signed statement of level and protocol version echoing ``nonce``."""
        report = AttestationReport(
            security_level=self.security_level,
            protocol_version=CURRENT_PROTOCOL_VERSION,
            nonce=nonce,
            device_id=self.device_id,
            vault_signature=b"",
        )
        return sign_message(report, self._sign_private, self._suite)

    # ------------------------------------------------------------------
    # license installation
    # ------------------------------------------------------------------

    def vault_install(
        self,
        sealed_body: bytes,
        nonce: bytes,
        handle: SessionHandle,
        binding: CkcBinding,
        now: int,
    ) -> InstallReceipt:
        """Open a license body under the session key and install its keys.

        Parameters
        ----------
        sealed_body : bytes
            ``Ckc.sealed_body``
        nonce : bytes
            ``Ckc.nonce``
        handle : SessionHandle
            Handle from ``begin_key_exchange`` for the originating request
        binding : CkcBinding
            Content and anti-replay seed of the originating request
        now : int
            Client time, recorded as ``installed_at``

        Returns
        -------
        InstallReceipt
            KeyIds and policy; keys stay in the vault

        Raises
        ------
        DrmError
            ``INVALID_HANDLE``, ``OPEN_FAILED`` (authentication, binding or
            recipient mismatch), ``ALREADY_INSTALLED`` (same KeyId, other key)
        """
        with self._lock:
            session_key = self._sessions.get(handle.id)
            if session_key is None:
                raise DrmError(ErrorCode.INVALID_HANDLE, "unknown or closed session handle")
            plaintext = self._suite.aead.open(
                bytes(session_key), nonce, encode(binding), sealed_body
            )
            try:
                body = decode(plaintext, LicenseBody)
            except DrmError as e:
                raise DrmError(ErrorCode.OPEN_FAILED, "license body does not decode") from e
            if (
                body.secure_content_id != binding.secure_content_id
                or body.anti_replay_seed != binding.anti_replay_seed
            ):
                raise DrmError(ErrorCode.OPEN_FAILED, "license body bound to another request")

            keys = self._unwrap(body)
            receipt = self._install(body.secure_content_id, keys, body, now)
            self.close_session(handle)
            return receipt

    def _unwrap(self, body: LicenseBody) -> List[Tuple[KeyId, int, bytes]]:
        if body.recipient_id == self.device_id:
            kem_private = self._kem_private
        elif self._domain_id is not None and body.recipient_id == self._domain_id:
            assert self._domain_kem_private is not None
            kem_private = self._domain_kem_private
        else:
            raise DrmError(ErrorCode.OPEN_FAILED, "license wrapped for another recipient")
        try:
            shared = self._suite.kem.decap(kem_private, body.key_wrap_encap)
        except DrmError as e:
            raise DrmError(ErrorCode.OPEN_FAILED, "key wrap does not decapsulate") from e
        wrap_key = self._suite.derive(shared, WRAP_KEY_LABEL)
        keys = []
        for wrapped in body.wrapped_keys:
            ad = wrapped_key_ad(wrapped.key_id, wrapped.period)
            key = self._suite.aead.open(wrap_key, wrapped.nonce, ad, wrapped.sealed_key)
            keys.append((wrapped.key_id, wrapped.period, key))
        return keys

    def _install(
        self,
        secure_content_id: bytes,
        keys: List[Tuple[KeyId, int, bytes]],
        body: LicenseBody,
        now: int,
    ) -> InstallReceipt:
        policy = body.policy
        expiry = policy.expiry
        if policy.mode is LicenseMode.LEASE and body.lease_expiry is not None:
            expiry = body.lease_expiry

        for key_id, _, key in keys:
            existing = self._entries.get(key_id)
            if existing is not None and bytes(existing.key) != key:
                raise DrmError(ErrorCode.ALREADY_INSTALLED, f"key {key_id.hex()} already installed")

        for key_id, period, key in keys:
            old = self._entries.get(key_id)
            if old is not None:
                old.zeroize()
            self._entries[key_id] = VaultEntry(
                key_id=key_id,
                key=bytearray(key),
                period=period,
                expiry=expiry,
                mode=policy.mode,
                persistent=policy.persistent,
                installed_at=now,
                secure_content_id=secure_content_id,
                lease_slot_token=body.lease_slot_token,
            )
            if self.debug_export:
                log_event(logger, logging.INFO, "key_installed", key_id=key_id.hex(), key=key.hex())

        receipt = InstallReceipt(
            secure_content_id=secure_content_id,
            key_ids=tuple(k for k, _, _ in keys),
            policy=policy,
            protocol_version=body.protocol_version,
            server_time=body.server_time,
            lease_slot_token=body.lease_slot_token,
            lease_expiry=body.lease_expiry,
            debug_keys=tuple(k for _, _, k in keys) if self.debug_export else None,
        )
        self._licenses[secure_content_id] = receipt
        log_event(
            logger,
            logging.DEBUG,
            "license_installed",
            keys=len(keys),
            mode=policy.mode,
            expiry=expiry,
        )
        return receipt

    def installed_key_ids(self) -> Tuple[KeyId, ...]:
        with self._lock:
            return tuple(self._entries)

    # ------------------------------------------------------------------
    # playback
    # ------------------------------------------------------------------

    def create_sink(self, sink_id: str = "display") -> DisplaySink:
        return DisplaySink(sink_id, self._suite)

    def _check_live(self, entry: VaultEntry, now: int) -> None:
        if self.enforce_expiry and now >= entry.expiry:
            raise DrmError(ErrorCode.KEY_EXPIRED, f"key {entry.key_id.hex()} expired")

    def open_playback(self, key_ids: Iterable[KeyId], now: int) -> PlaybackGrant:
        """Check every key once at playback start.

        Raises
        ------
        DrmError
            ``KEY_MISSING`` or ``KEY_EXPIRED``
        """
        wanted = frozenset(key_ids)
        with self._lock:
            for key_id in wanted:
                entry = self._entries.get(key_id)
                if entry is None:
                    raise DrmError(ErrorCode.KEY_MISSING, f"key {key_id.hex()} not installed")
                self._check_live(entry, now)
            grant = PlaybackGrant(id=secrets.token_hex(8), key_ids=wanted, opened_at=now)
            self._grants[grant.id] = grant
            return grant

    def close_playback(self, grant: PlaybackGrant) -> None:
        with self._lock:
            self._grants.pop(grant.id, None)

    def decrypt_segment_to_sink(
        self,
        ciphertext: bytes,
        record: SegmentRecord,
        content_id: str,
        scheme: EncryptionScheme,
        sink: DisplaySink,
        now: int,
        grant: Optional[PlaybackGrant] = None,
    ) -> int:
        """Decrypt one segment into ``sink`` and return the delivered length.

        A RENTAL or PERSISTENT key that expired after ``grant`` was opened
        still decrypts for that grant; LEASE keys never do.

        Raises
        ------
        DrmError
            ``KEY_MISSING``, ``KEY_EXPIRED`` or ``OPEN_FAILED``
        """
        with self._lock:
            entry = self._entries.get(record.key_id)
            if entry is None:
                raise DrmError(ErrorCode.KEY_MISSING, f"key {record.key_id.hex()} not installed")
            if self.enforce_expiry and now >= entry.expiry:
                continuing = (
                    grant is not None
                    and grant.id in self._grants
                    and record.key_id in grant.key_ids
                    and entry.mode is not LicenseMode.LEASE
                )
                if not continuing:
                    raise DrmError(ErrorCode.KEY_EXPIRED, f"key {record.key_id.hex()} expired")
            key = bytes(entry.key)

        if scheme is EncryptionScheme.PLAIN_CTR:
            plaintext = self._suite.cipher.apply(key, record.nonce, ciphertext)
        else:
            ad = segment_ad(content_id, record.index, record.key_id)
            plaintext = self._suite.aead.open(key, record.nonce, ad, ciphertext)
        sink._deliver(plaintext)
        return len(plaintext)

    # ------------------------------------------------------------------
    # disposal and lease renewal
    # ------------------------------------------------------------------

    def dispose_expired(self, now: int) -> int:
        """Zeroize and remove every entry with ``now >= expiry``.

        Returns
        -------
        int
            Number of entries removed
        """
        if not self.enforce_expiry:
            return 0
        with self._lock:
            expired = [k for k, e in self._entries.items() if now >= e.expiry]
            for key_id in expired:
                self._entries.pop(key_id).zeroize()
            live = {e.secure_content_id for e in self._entries.values()}
            for scid in [s for s in self._licenses if s not in live]:
                del self._licenses[scid]
        if expired:
            log_event(logger, logging.DEBUG, "keys_disposed", count=len(expired))
        return len(expired)

    def discard_license(self, secure_content_id: bytes) -> int:
        """Zeroize and remove every key of one content; returns how many."""
        with self._lock:
            dropped = [
                k for k, e in self._entries.items() if e.secure_content_id == secure_content_id
            ]
            for key_id in dropped:
                self._entries.pop(key_id).zeroize()
            self._licenses.pop(secure_content_id, None)
        return len(dropped)

    def apply_renewal(self, renewal_bytes: bytes, server_public_key: bytes) -> int:
        """Extend lease keys from a server-signed renewal.

        Raises
        ------
        DrmError
            ``BAD_SIGNATURE``/``MALFORMED`` for a bad renewal, ``KEY_MISSING``
            if no installed key carries its slot token
        """
        renewal = open_signed(renewal_bytes, LeaseRenewal, server_public_key, self._suite)
        with self._lock:
            matching = [
                e
                for e in self._entries.values()
                if e.lease_slot_token == renewal.slot_token
                and e.secure_content_id == renewal.secure_content_id
            ]
            if not matching:
                raise DrmError(ErrorCode.KEY_MISSING, "no installed key holds this lease slot")
            for entry in matching:
                entry.expiry = renewal.lease_expiry
            receipt = self._licenses.get(renewal.secure_content_id)
            if receipt is not None:
                self._licenses[renewal.secure_content_id] = InstallReceipt(
                    secure_content_id=receipt.secure_content_id,
                    key_ids=receipt.key_ids,
                    policy=receipt.policy,
                    protocol_version=receipt.protocol_version,
                    server_time=renewal.server_time,
                    lease_slot_token=receipt.lease_slot_token,
                    lease_expiry=renewal.lease_expiry,
                    debug_keys=receipt.debug_keys,
                )
        return renewal.lease_expiry

    # ------------------------------------------------------------------
    # persistent play context
    # ------------------------------------------------------------------

    def _binding_key(self) -> bytes:
        return self._suite.derive(self._kem_private + self._sign_private, HDS_LABEL)

    def export_persistent(self, secure_content_id: bytes, content_id: str) -> bytes:
        """Seal the installed license of a content to this device.

        Returns
        -------
        bytes
            Encoded ``OfflineRecord``

        Raises
        ------
        DrmError
            ``NOT_PERSISTENT`` if the policy forbids storage, ``KEY_MISSING``
            if the license is no longer installed
        """
        with self._lock:
            receipt = self._licenses.get(secure_content_id)
            if receipt is None:
                raise DrmError(ErrorCode.KEY_MISSING, "no license installed for this content")
            if not receipt.policy.persistent:
                raise DrmError(ErrorCode.NOT_PERSISTENT, "license may not be stored offline")
            keys = []
            for key_id in receipt.key_ids:
                entry = self._entries.get(key_id)
                if entry is None:
                    raise DrmError(ErrorCode.KEY_MISSING, f"key {key_id.hex()} was disposed")
                keys.append(PersistedKey(key_id=key_id, period=entry.period, key=bytes(entry.key)))
            context = PersistentContext(
                secure_content_id=secure_content_id,
                policy=receipt.policy,
                keys=tuple(keys),
                protocol_version=receipt.protocol_version,
            )
        nonce = self._suite.random_nonce()
        ciphertext = self._suite.aead.seal(
            self._binding_key(), nonce, _offline_ad(content_id, self.device_id), encode(context)
        )
        record = OfflineRecord(
            content_id=content_id,
            device_id=self.device_id,
            nonce=nonce,
            ciphertext=ciphertext,
            expiry=receipt.policy.expiry,
        )
        return encode(record)

    def import_persistent(self, record_bytes: bytes, now: int) -> InstallReceipt:
        """Reinstall a license sealed by ``export_persistent`` on this device.

        Raises
        ------
        DrmError
            ``MALFORMED`` for a damaged record, ``DEVICE_MISMATCH`` if sealed
            by another device, ``EXPIRED`` if the policy has expired
        """
        record = decode(record_bytes, OfflineRecord)
        if record.device_id != self.device_id:
            raise DrmError(ErrorCode.DEVICE_MISMATCH, "offline record belongs to another device")
        try:
            plaintext = self._suite.aead.open(
                self._binding_key(),
                record.nonce,
                _offline_ad(record.content_id, self.device_id),
                record.ciphertext,
            )
        except DrmError as e:
            raise DrmError(ErrorCode.DEVICE_MISMATCH, "offline record does not open") from e
        context = decode(plaintext, PersistentContext)
        if self.enforce_expiry and context.policy.expired(now):
            raise DrmError(ErrorCode.EXPIRED, "offline license has expired")
        body = LicenseBody(
            secure_content_id=context.secure_content_id,
            anti_replay_seed=bytes(16),
            recipient_id=self.device_id,
            key_wrap_encap=b"",
            wrapped_keys=(),
            policy=context.policy,
            protocol_version=context.protocol_version,
            server_time=now,
        )
        keys = [(k.key_id, k.period, k.key) for k in context.keys]
        with self._lock:
            return self._install(context.secure_content_id, keys, body, now)
