"""License server request pipeline.

``handle_license_request`` runs a fixed sequence of checks; the first one to
fail decides the error code, so a request failing several checks always
yields the same code:

1. decode the SPC envelope (MALFORMED)
2. client certificate chain (BAD_CERT)
3. request signature and vault attestation (BAD_SIGNATURE, REPLAY), then the
   per-device rate limit (RATE_LIMITED)
4. auth token (AUTH_FAILED)
5. anti-replay seed and client time (REPLAY); the seed is recorded only once
   step 8 has passed, so a rejected request can be resubmitted unchanged
   and fail with the same code
6. protocol version floor (VERSION_ROLLBACK)
7. content lookup and security-level floor (UNKNOWN_KEYID, LEVEL_TOO_LOW)
8. session key decapsulation and key selection (MALFORMED, UNKNOWN_KEYID)
9. lease slot allocation for LEASE content on the server clock (LEASE_EXHAUSTED)
10. key wrapping, sealing under the session key and signing
"""

import logging
import threading
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Optional, Tuple, Union

from minidrm.core.clock import Clock, SystemClock
from minidrm.core.crypto import CryptoSuite
from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.keys import (
    KeyPair,
    message_signature_valid,
    secure_content_id,
    sign_message,
    verify_attestation,
    verify_client_certificate,
)
from minidrm.core.logs import log_event, transcript_digest
from minidrm.core.messages import (
    PROTOCOL_VERSIONS,
    SESSION_KEY_LABEL,
    SESSION_KEY_SIZE,
    WRAP_KEY_LABEL,
    Ckc,
    CkcBinding,
    LeaseAction,
    LeaseReleased,
    LeaseRenewal,
    LeaseRequest,
    LicenseBody,
    LicenseMode,
    MeteringEvent,
    MeteringReport,
    Spc,
    WrappedKey,
    wrapped_key_ad,
)
from minidrm.core.types import ClientCertificate, ContentKey, KeyId, ServerCertificate
from minidrm.core.wire import WireMessage, decode, encode
from minidrm.packager.registry import KeyRegistry, open_registry
from minidrm.server.ledger import DEFAULT_REPLAY_WINDOW, ReplayLedger
from minidrm.server.lease import DEFAULT_LEASE_DURATION, LeaseTable
from minidrm.server.metering import MeteringLog
from minidrm.server.policy import ContentPolicy
from minidrm.server.ratelimit import DEFAULT_RATE, RateLimiter

logger = logging.getLogger(__name__)

DEFAULT_VERSION_FLOOR = 2


class TokenAuthenticator:
    """Stub authentication service: bearer token to account name.

    Examples
    --------
    >>> auth = TokenAuthenticator({"tok-alice": "alice"})
    >>> auth.authenticate("tok-alice")
    'alice'
    """

    def __init__(self, tokens: Optional[Mapping[str, str]] = None):
        self._tokens: Dict[str, str] = dict(tokens or {})
        self._lock = threading.Lock()

    def register(self, token: str, account: str) -> None:
        with self._lock:
            self._tokens[token] = account

    def authenticate(self, token: str) -> str:
        """Return the account behind ``token``.

        Raises
        ------
        DrmError
            ``AUTH_FAILED`` for an unknown token
        """
        with self._lock:
            account = self._tokens.get(token)
        if account is None:
            raise DrmError(ErrorCode.AUTH_FAILED, "unknown auth token")
        return account


@dataclass(frozen=True)
class ContentEntry:
    content_id: str
    registry: KeyRegistry
    policy: ContentPolicy


class LicenseServer:
    """Authenticates clients and issues licenses for registered content.

    Parameters
    ----------
    identity : KeyPair
        Server identity with its root-issued certificate
    suite : CryptoSuite
        Active crypto suite
    root_public_key : bytes
        Root verification key for client certificates
    clock : Clock, optional
        Server time source (default: system clock)
    auth : TokenAuthenticator or mapping, optional
        Token to account map (default: nobody is authorized)
    replay_window : int, default 600
        Seconds a seed is remembered and client time may drift
    version_floor : int, default 2
        Lowest protocol version the server answers with
    supported_versions : iterable of int, optional
        Versions the server speaks (default: all known versions)
    lease_duration : int, default 120
        Seconds a lease slot stays valid without renewal
    rate_limit : float or None, default 20
        Requests per second per device; None disables limiting
    replay_check : bool, default True
        Check anti-replay seeds. Only the ``no_replay_check`` conformance
        fixture turns this off.

    Examples
    --------
    >>> server = LicenseServer(server_identity, suite, root.sign_public, auth={"tok": "alice"})
    >>> server.add_content(output.registry, ContentPolicy(mode=LicenseMode.RENTAL))
    >>> ckc_bytes = server.handle_license_request(spc_bytes)
    """

    def __init__(
        self,
        identity: KeyPair,
        suite: CryptoSuite,
        root_public_key: bytes,
        clock: Optional[Clock] = None,
        auth: Union[TokenAuthenticator, Mapping[str, str], None] = None,
        replay_window: int = DEFAULT_REPLAY_WINDOW,
        version_floor: int = DEFAULT_VERSION_FLOOR,
        supported_versions: Optional[Iterable[int]] = None,
        lease_duration: int = DEFAULT_LEASE_DURATION,
        rate_limit: Optional[float] = DEFAULT_RATE,
        replay_check: bool = True,
    ):
        if identity.server_certificate is None:
            raise DrmError(ErrorCode.CONFIG, "server identity carries no certificate")
        self.suite = suite
        self.certificate: ServerCertificate = identity.server_certificate
        self._sign_private = identity.require("sign_private")
        self._kem_private = identity.require("kem_private")
        self.root_public_key = root_public_key
        self.clock = clock or SystemClock()
        if isinstance(auth, TokenAuthenticator):
            self.auth = auth
        else:
            self.auth = TokenAuthenticator(auth)
        self.version_floor = version_floor
        self.supported_versions: Tuple[int, ...] = tuple(supported_versions or PROTOCOL_VERSIONS)
        self.replay_check = replay_check
        self.ledger = ReplayLedger(replay_window)
        self.leases = LeaseTable(lease_duration, token_source=suite.rng.random_bytes)
        self.metering = MeteringLog()
        self.rate_limiter = (
            RateLimiter(self.clock, rate_limit) if rate_limit is not None else None
        )
        self._content: Dict[bytes, ContentEntry] = {}
        self._content_lock = threading.Lock()

    # ------------------------------------------------------------------
    # content registration
    # ------------------------------------------------------------------

    def add_content(self, registry: KeyRegistry, policy: ContentPolicy) -> bytes:
        """Register the keys of one package; returns its secure content id."""
        scid = secure_content_id(registry.content_id, self.suite)
        with self._content_lock:
            self._content[scid] = ContentEntry(registry.content_id, registry, policy)
        log_event(
            logger,
            logging.INFO,
            "content_registered",
            content_id=registry.content_id,
            keys=len(registry.entries),
            mode=policy.mode,
        )
        return scid

    def add_sealed_content(
        self, sealed_registry: bytes, transport_key: bytes, policy: ContentPolicy
    ) -> bytes:
        """Open a ``registry.sealed`` blob and register it."""
        return self.add_content(open_registry(sealed_registry, transport_key, self.suite), policy)

    def _lookup(self, scid: bytes) -> ContentEntry:
        with self._content_lock:
            entry = self._content.get(scid)
        if entry is None:
            raise DrmError(ErrorCode.UNKNOWN_KEYID, "no keys registered for this content")
        return entry

    # ------------------------------------------------------------------
    # shared checks
    # ------------------------------------------------------------------

    def _check_certificate(self, cert: ClientCertificate) -> None:
        if not verify_client_certificate(cert, self.root_public_key, self.suite):
            raise DrmError(ErrorCode.BAD_CERT, "client certificate rejected")

    def _check_signature(self, message: WireMessage, cert: ClientCertificate) -> None:
        if not message_signature_valid(message, cert.client_public_key, self.suite):
            raise DrmError(ErrorCode.BAD_SIGNATURE, "request signature rejected")

    def _throttle(self, cert: ClientCertificate) -> None:
        if self.rate_limiter is not None:
            self.rate_limiter.acquire(cert.device_id)

    def _check_client_time(self, client_time: int, now: int) -> None:
        if abs(now - client_time) > self.ledger.window:
            raise DrmError(ErrorCode.REPLAY, "client time outside the replay window")

    def _negotiate(self, offered: Iterable[int]) -> int:
        common = [v for v in set(offered) & set(self.supported_versions) if v >= self.version_floor]
        if not common:
            raise DrmError(
                ErrorCode.VERSION_ROLLBACK,
                f"no common protocol version at or above {self.version_floor}",
            )
        return max(common)

    # ------------------------------------------------------------------
    # license requests
    # ------------------------------------------------------------------

    def handle_license_request(self, spc_bytes: bytes) -> bytes:
        """Validate an SPC and answer with a signed CKC.

        Parameters
        ----------
        spc_bytes : bytes
            Encoded ``Spc``

        Returns
        -------
        bytes
            Encoded, server-signed ``Ckc``

        Raises
        ------
        DrmError
            The code of the first failing pipeline stage (see module docstring)
        """
        try:
            return self._issue(spc_bytes)
        except DrmError as e:
            log_event(
                logger,
                logging.INFO,
                "license_rejected",
                code=e.code,
                transcript=transcript_digest(spc_bytes),
            )
            raise

    def _issue(self, spc_bytes: bytes) -> bytes:
        now = self.clock.now()

        spc = decode(spc_bytes, Spc)
        cert = spc.client_certificate
        self._check_certificate(cert)
        self._check_signature(spc, cert)
        report = verify_attestation(
            spc.attestation, spc.anti_replay_seed, cert.client_public_key, self.suite
        )
        if report.security_level != cert.security_level or report.device_id != cert.device_id:
            raise DrmError(ErrorCode.BAD_CERT, "attestation does not match the certificate")
        self._throttle(cert)
        account = self.auth.authenticate(spc.auth_token)
        if self.replay_check:
            self.ledger.check(spc.anti_replay_seed, spc.client_time_reference, now)
        version = self._negotiate(spc.supported_versions)

        entry = self._lookup(spc.secure_content_id)
        policy = entry.policy
        if cert.security_level < policy.min_security_level:
            raise DrmError(
                ErrorCode.LEVEL_TOO_LOW,
                f"{cert.security_level.name} is below {policy.min_security_level.name}",
            )
        if policy.domain and cert.domain_kem_key is None:
            raise DrmError(ErrorCode.BAD_CERT, "domain license requested by a non-member")

        shared = self.suite.kem.decap(self._kem_private, spc.session_key_encap)
        session_key = self.suite.derive(shared, SESSION_KEY_LABEL, SESSION_KEY_SIZE)
        available = entry.registry.by_key_id()
        keys = [available[k] for k in dict.fromkeys(spc.key_ids) if k in available]
        if not keys:
            raise DrmError(ErrorCode.UNKNOWN_KEYID, "none of the requested keys are registered")

        license_policy = policy.issue(spc.client_time_reference)
        if policy.mode is LicenseMode.LEASE:
            self._check_client_time(spc.client_time_reference, now)
        if self.replay_check:
            self.ledger.check_and_record(spc.anti_replay_seed, spc.client_time_reference, now)
        slot_token: Optional[bytes] = None
        lease_expiry: Optional[int] = None
        if policy.mode is LicenseMode.LEASE:
            try:
                slot = self.leases.allocate(
                    account,
                    entry.content_id,
                    cert.device_id,
                    policy.max_concurrent,
                    now,
                    spc.client_time_reference,
                )
            except DrmError:
                self.ledger.discard(spc.anti_replay_seed)
                raise
            slot_token, lease_expiry = slot.token, slot.client_expiry

        if policy.domain:
            assert cert.domain_id is not None and cert.domain_kem_key is not None
            recipient_id, recipient_key = cert.domain_id, cert.domain_kem_key
        else:
            recipient_id, recipient_key = cert.device_id, cert.client_kem_key
        wrap_encap, wrapped = self._wrap_keys(keys, recipient_key)

        body = LicenseBody(
            secure_content_id=spc.secure_content_id,
            anti_replay_seed=spc.anti_replay_seed,
            recipient_id=recipient_id,
            key_wrap_encap=wrap_encap,
            wrapped_keys=wrapped,
            policy=license_policy,
            protocol_version=version,
            server_time=now,
            lease_slot_token=slot_token,
            lease_expiry=lease_expiry,
        )
        binding = CkcBinding(
            secure_content_id=spc.secure_content_id, anti_replay_seed=spc.anti_replay_seed
        )
        nonce = self.suite.random_nonce()
        sealed = self.suite.aead.seal(session_key, nonce, encode(binding), encode(body))
        ckc = Ckc(nonce=nonce, sealed_body=sealed, server_signature=b"")
        ckc = sign_message(ckc, self._sign_private, self.suite)
        ckc_bytes = encode(ckc)

        self.metering.record_metering(
            account, entry.content_id, MeteringEvent.LICENSE_ISSUED, now=now
        )
        log_event(
            logger,
            logging.INFO,
            "license_issued",
            account=account,
            content_id=entry.content_id,
            keys=len(keys),
            mode=policy.mode,
            version=version,
            transcript=transcript_digest(spc_bytes, ckc_bytes),
        )
        return ckc_bytes

    def _wrap_keys(
        self, keys: Iterable[ContentKey], recipient_kem_key: bytes
    ) -> Tuple[bytes, Tuple[WrappedKey, ...]]:
        encap, shared = self.suite.kem.encap(recipient_kem_key)
        wrap_key = self.suite.derive(shared, WRAP_KEY_LABEL)
        wrapped = []
        for key in keys:
            nonce = self.suite.random_nonce()
            sealed = self.suite.aead.seal(
                wrap_key, nonce, wrapped_key_ad(key.key_id, key.period), key.key
            )
            wrapped.append(
                WrappedKey(key_id=key.key_id, period=key.period, nonce=nonce, sealed_key=sealed)
            )
        return encap, tuple(wrapped)

    # ------------------------------------------------------------------
    # leases and metering
    # ------------------------------------------------------------------

    def handle_lease_request(
        self, request_bytes: bytes, expected_action: Optional[LeaseAction] = None
    ) -> bytes:
        """Renew or release a lease slot.

        Parameters
        ----------
        request_bytes : bytes
            Encoded ``LeaseRequest``
        expected_action : LeaseAction, optional
            Action the caller's route serves; a request for another action
            is refused as MALFORMED

        Returns
        -------
        bytes
            Signed ``LeaseRenewal`` (renew) or ``LeaseReleased`` (release)

        Raises
        ------
        DrmError
            MALFORMED, BAD_CERT, BAD_SIGNATURE, RATE_LIMITED, AUTH_FAILED,
            UNKNOWN_KEYID, REPLAY (client time outside the window) or LEASE_NOT_HELD
        """
        request = decode(request_bytes, LeaseRequest)
        if expected_action is not None and request.action is not expected_action:
            raise DrmError(
                ErrorCode.MALFORMED,
                f"{request.action.name} request sent to the {expected_action.name} route",
            )
        cert = request.client_certificate
        self._check_certificate(cert)
        self._check_signature(request, cert)
        self._throttle(cert)
        account = self.auth.authenticate(request.auth_token)
        entry = self._lookup(request.secure_content_id)

        now = self.clock.now()
        self._check_client_time(request.client_time, now)

        if request.action is LeaseAction.RELEASE:
            self.leases.release(account, entry.content_id, cert.device_id, request.slot_token, now)
            log_event(
                logger, logging.INFO, "lease_released", account=account, content_id=entry.content_id
            )
            released = LeaseReleased(
                secure_content_id=request.secure_content_id,
                slot_token=request.slot_token,
                server_signature=b"",
            )
            return encode(sign_message(released, self._sign_private, self.suite))

        slot = self.leases.renew(
            account,
            entry.content_id,
            cert.device_id,
            request.slot_token,
            now,
            request.client_time,
        )
        self.metering.record_metering(
            account, entry.content_id, MeteringEvent.LEASE_RENEWED, now=now
        )
        log_event(
            logger,
            logging.INFO,
            "lease_renewed",
            account=account,
            content_id=entry.content_id,
            expiry=slot.client_expiry,
        )
        renewal = LeaseRenewal(
            secure_content_id=request.secure_content_id,
            slot_token=request.slot_token,
            lease_expiry=slot.client_expiry,
            server_time=now,
            server_signature=b"",
        )
        return encode(sign_message(renewal, self._sign_private, self.suite))

    def handle_metering(self, report_bytes: bytes) -> None:
        """Record a client-signed playback event."""
        report = decode(report_bytes, MeteringReport)
        cert = report.client_certificate
        self._check_certificate(cert)
        self._check_signature(report, cert)
        self._throttle(cert)
        account = self.auth.authenticate(report.auth_token)
        entry = self._lookup(report.secure_content_id)
        self.metering.record_metering(account, entry.content_id, report.event, now=self.clock.now())

    def metering_counts(self, account: str) -> Dict[str, Dict[str, int]]:
        return self.metering.counts_for(account)

    def registered_content(self) -> Tuple[str, ...]:
        with self._content_lock:
            return tuple(sorted(e.content_id for e in self._content.values()))

    def key_ids_for(self, content_id: str) -> Tuple[KeyId, ...]:
        entry = self._lookup(secure_content_id(content_id, self.suite))
        return tuple(k.key_id for k in entry.registry.entries)
