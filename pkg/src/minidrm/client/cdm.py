"""Content decryption module: license requests and playback.

The CDM runs outside the vault. It verifies manifests and the server
certificate, builds signed license requests, hands license responses to the
vault and drives segment decryption into a display sink. Keys never pass
through it.
"""

import dataclasses
import logging
from typing import Iterable, List, Optional, Sequence, Tuple

from minidrm.client.offline import OfflineStore
from minidrm.client.session import PendingRequest, PlaybackSession, SegmentFetcher, SessionState
from minidrm.client.transport import LicenseTransport
from minidrm.core.clock import Clock, SystemClock
from minidrm.core.crypto import CryptoSuite
from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.keys import open_signed, secure_content_id, verify_server_certificate
from minidrm.core.logs import log_event
from minidrm.core.messages import (
    ANTI_REPLAY_SEED_SIZE,
    PROTOCOL_VERSIONS,
    Ckc,
    CkcBinding,
    LeaseAction,
    LeaseReleased,
    LeaseRequest,
    LicenseMode,
    MeteringEvent,
    MeteringReport,
    Spc,
)
from minidrm.core.types import ClientCertificate, KeyId, ServerCertificate
from minidrm.core.wire import decode, encode, signed_payload
from minidrm.packager.manifest import (
    SegmentRecord,
    SignedManifest,
    decode_init_data,
    verify_manifest,
)
from minidrm.packager.package import verify_segment_digest
from minidrm.tee.sink import DisplaySink
from minidrm.tee.vault import TeeVault

logger = logging.getLogger(__name__)

DEFAULT_SEGMENT_SECONDS = 1
DEFAULT_LEASE_RENEW_MARGIN = 30


class Cdm:
    """Client-side license and playback driver.

    Parameters
    ----------
    vault : TeeVault
        Device vault holding the identity and every key
    certificate : ClientCertificate
        Root-issued certificate of the device
    server_certificate : ServerCertificate or None
        Certificate of the license server to talk to; None for a device that
        only resumes offline licenses
    root_public_key : bytes
        Root verification key for the server certificate
    publisher_public_key : bytes
        Verification key for manifests
    suite : CryptoSuite
        Active crypto suite
    clock : Clock, optional
        Client time source (default: system clock)
    transport : LicenseTransport, optional
        Channel to the license server; needed for acquisition, leases and
        metering
    offline_store : OfflineStore, optional
        Store for persistent licenses
    verify_manifests : bool, default True
        Check manifest signatures. Only the ``unsigned_manifest``
        conformance fixture turns this off.
    segment_seconds : int, default 1
        Playback duration of one segment in client time
    lease_renew_margin : int, default 30
        Renew a lease once it is this close to expiry
    supported_versions : sequence of int, optional
        Protocol versions offered in requests (default: all known)

    Examples
    --------
    >>> cdm = Cdm(vault, cert, server_cert, root_pub, publisher_pub, suite,
    ...           transport=InProcessTransport(server))
    >>> session = cdm.open_session(cdm.load_manifest(manifest_bytes), package.read_segment)
    >>> cdm.acquire_license(session, "token")
    >>> cdm.play(session, vault.create_sink())
    """

    def __init__(
        self,
        vault: TeeVault,
        certificate: ClientCertificate,
        server_certificate: Optional[ServerCertificate],
        root_public_key: bytes,
        publisher_public_key: bytes,
        suite: CryptoSuite,
        clock: Optional[Clock] = None,
        transport: Optional[LicenseTransport] = None,
        offline_store: Optional[OfflineStore] = None,
        verify_manifests: bool = True,
        segment_seconds: int = DEFAULT_SEGMENT_SECONDS,
        lease_renew_margin: int = DEFAULT_LEASE_RENEW_MARGIN,
        supported_versions: Optional[Sequence[int]] = None,
    ):
        if segment_seconds < 1:
            raise ValueError(f"segment_seconds must be >= 1, got {segment_seconds}")
        if lease_renew_margin < 0:
            raise ValueError(f"lease_renew_margin must be >= 0, got {lease_renew_margin}")
        if certificate.device_id != vault.device_id:
            raise DrmError(ErrorCode.CONFIG, "certificate does not belong to this vault")
        self.vault = vault
        self.certificate = certificate
        self.server_certificate = server_certificate
        self.root_public_key = root_public_key
        self.publisher_public_key = publisher_public_key
        self.suite = suite
        self.clock = clock or SystemClock()
        self.transport = transport
        self.offline_store = offline_store
        self.verify_manifests = verify_manifests
        self.segment_seconds = segment_seconds
        self.lease_renew_margin = lease_renew_margin
        self.supported_versions: Tuple[int, ...] = tuple(supported_versions or PROTOCOL_VERSIONS)

    # ------------------------------------------------------------------
    # manifests and sessions
    # ------------------------------------------------------------------

    def load_manifest(self, manifest_bytes: bytes) -> SignedManifest:
        """Decode a manifest, verifying the publisher signature first.

        Raises
        ------
        DrmError
            ``BAD_SIGNATURE`` or ``MALFORMED``
        """
        if not self.verify_manifests:
            return decode(manifest_bytes, SignedManifest)
        return verify_manifest(manifest_bytes, self.publisher_public_key, self.suite)

    def open_session(
        self, manifest: SignedManifest, fetch: Optional[SegmentFetcher] = None
    ) -> PlaybackSession:
        return PlaybackSession(
            content_id=manifest.content_id,
            manifest=manifest,
            fetch=fetch,
            secure_content_id=secure_content_id(manifest.content_id, self.suite),
        )

    def _require_transport(self) -> LicenseTransport:
        if self.transport is None:
            raise DrmError(ErrorCode.CONFIG, "no license transport attached")
        return self.transport

    def _now(self, now: Optional[int]) -> int:
        return self.clock.now() if now is None else now

    def _server_certificate(self) -> ServerCertificate:
        if self.server_certificate is None:
            raise DrmError(ErrorCode.SERVER_CERT_INVALID, "no server certificate configured")
        return self.server_certificate

    # ------------------------------------------------------------------
    # license acquisition
    # ------------------------------------------------------------------

    def create_license_request(
        self, session: PlaybackSession, auth_token: str, now: Optional[int] = None
    ) -> Spc:
        """Build a signed license request for the session's content.

        Every call uses a fresh session key and anti-replay seed; a request
        still outstanding on the session is abandoned.

        Raises
        ------
        DrmError
            ``SERVER_CERT_INVALID`` if the server certificate does not chain
            to the root or has expired, ``MALFORMED`` if the manifest's
            InitData names another content
        """
        now = self._now(now)
        if session.state is SessionState.STOPPED:
            raise DrmError(ErrorCode.SESSION_MISMATCH, "session is stopped")
        server_cert = self._server_certificate()
        if not verify_server_certificate(server_cert, self.root_public_key, self.suite, now):
            raise DrmError(ErrorCode.SERVER_CERT_INVALID, "server certificate not verified")
        init = decode_init_data(session.manifest.init_data)
        if init.content_id != session.content_id:
            raise DrmError(ErrorCode.MALFORMED, "InitData names another content")

        self._abandon_request(session)
        handle, encap = self.vault.begin_key_exchange(server_cert.server_kem_key)
        seed = self.suite.rng.random_bytes(ANTI_REPLAY_SEED_SIZE)
        spc = Spc(
            session_key_encap=encap,
            anti_replay_seed=seed,
            secure_content_id=session.secure_content_id,
            key_ids=tuple(init.key_ids),
            client_time_reference=now,
            client_certificate=self.certificate,
            supported_versions=self.supported_versions,
            auth_token=auth_token,
            attestation=self.vault.attest(seed),
            request_signature=b"",
        )
        signature = self.vault.sign_request(signed_payload(spc))
        spc = dataclasses.replace(spc, request_signature=signature)
        session.pending = PendingRequest(
            handle=handle, anti_replay_seed=seed, secure_content_id=session.secure_content_id
        )
        session.auth_token = auth_token
        return spc

    def _abandon_request(self, session: PlaybackSession) -> None:
        if session.pending is not None:
            self.vault.close_session(session.pending.handle)
            session.pending = None

    def process_license_response(
        self, ckc_bytes: bytes, session: PlaybackSession, now: Optional[int] = None
    ) -> None:
        """Verify a CKC and install its keys in the vault.

        Raises
        ------
        DrmError
            ``BAD_SIGNATURE`` if the response is not a CKC signed by the
            server, ``SESSION_MISMATCH`` if it does not open under the
            outstanding request, ``POLICY_UNSATISFIABLE`` if the license
            cannot be honoured on this device
        """
        now = self._now(now)
        pending = session.pending
        if pending is None:
            raise DrmError(ErrorCode.SESSION_MISMATCH, "no outstanding license request")
        try:
            ckc = open_signed(
                ckc_bytes, Ckc, self._server_certificate().server_public_key, self.suite
            )
        except DrmError as e:
            if e.code is ErrorCode.MALFORMED:
                raise DrmError(ErrorCode.BAD_SIGNATURE, "response is not a signed CKC") from e
            raise

        binding = CkcBinding(
            secure_content_id=pending.secure_content_id,
            anti_replay_seed=pending.anti_replay_seed,
        )
        try:
            receipt = self.vault.vault_install(
                ckc.sealed_body, ckc.nonce, pending.handle, binding, now
            )
        except DrmError as e:
            if e.code in (ErrorCode.OPEN_FAILED, ErrorCode.INVALID_HANDLE):
                raise DrmError(ErrorCode.SESSION_MISMATCH, e.message) from e
            raise
        finally:
            self._abandon_request(session)

        policy = receipt.policy
        problem: Optional[str] = None
        missing = set(session.manifest.key_ids) - set(receipt.key_ids)
        if policy.min_security_level > self.vault.security_level:
            problem = "device level below license minimum"
        elif receipt.protocol_version not in self.supported_versions:
            problem = "license uses an unoffered version"
        elif policy.mode is LicenseMode.LEASE and receipt.lease_slot_token is None:
            problem = "lease license without a slot"
        elif missing:
            problem = f"license lacks {len(missing)} manifest key(s)"
        if problem is not None:
            self.vault.discard_license(receipt.secure_content_id)
            raise DrmError(ErrorCode.POLICY_UNSATISFIABLE, problem)

        session.receipt = receipt
        session.transition(SessionState.LICENSED)
        log_event(
            logger,
            logging.INFO,
            "license_installed",
            content_id=session.content_id,
            mode=policy.mode,
            expiry=receipt.expiry,
            version=receipt.protocol_version,
        )

    def acquire_license(
        self, session: PlaybackSession, auth_token: str, now: Optional[int] = None
    ) -> None:
        """Request, fetch and install a license through the transport."""
        transport = self._require_transport()
        now = self._now(now)
        spc = self.create_license_request(session, auth_token, now)
        try:
            ckc_bytes = transport.acquire(encode(spc))
        except DrmError:
            self._abandon_request(session)
            raise
        self.process_license_response(ckc_bytes, session, now)

    # ------------------------------------------------------------------
    # leases and metering
    # ------------------------------------------------------------------

    def _lease_request(self, session: PlaybackSession, action: LeaseAction, now: int) -> bytes:
        assert session.lease_slot_token is not None
        request = LeaseRequest(
            secure_content_id=session.secure_content_id,
            slot_token=session.lease_slot_token,
            action=action,
            auth_token=session.auth_token or "",
            client_certificate=self.certificate,
            client_time=now,
            request_signature=b"",
        )
        signature = self.vault.sign_request(signed_payload(request))
        return encode(dataclasses.replace(request, request_signature=signature))

    def renew_lease(self, session: PlaybackSession, now: Optional[int] = None) -> int:
        """Renew the session's lease slot; returns the new lease expiry.

        Raises
        ------
        DrmError
            ``LEASE_LOST`` if the server refuses or cannot be reached
        """
        now = self._now(now)
        if session.lease_slot_token is None:
            raise DrmError(ErrorCode.LEASE_LOST, "session holds no lease")
        transport = self._require_transport()
        try:
            answer = transport.renew_lease(self._lease_request(session, LeaseAction.RENEW, now))
            expiry = self.vault.apply_renewal(answer, self._server_certificate().server_public_key)
        except DrmError as e:
            log_event(logger, logging.WARNING, "lease_renewal_failed", code=e.code)
            raise DrmError(ErrorCode.LEASE_LOST, f"lease renewal failed: {e.message}") from e
        assert session.receipt is not None
        session.receipt = dataclasses.replace(session.receipt, lease_expiry=expiry)
        log_event(
            logger, logging.DEBUG, "lease_renewed", content_id=session.content_id, expiry=expiry
        )
        return expiry

    def _release_lease(self, session: PlaybackSession, now: int) -> None:
        if session.lease_slot_token is None or self.transport is None:
            return
        try:
            answer = self.transport.release_lease(
                self._lease_request(session, LeaseAction.RELEASE, now)
            )
            open_signed(
                answer, LeaseReleased, self._server_certificate().server_public_key, self.suite
            )
        except DrmError as e:
            log_event(logger, logging.WARNING, "lease_release_failed", code=e.code)

    def _report(self, session: PlaybackSession, event: MeteringEvent, now: int) -> None:
        if self.transport is None or session.auth_token is None:
            return
        report = MeteringReport(
            secure_content_id=session.secure_content_id,
            event=event,
            auth_token=session.auth_token,
            client_certificate=self.certificate,
            client_time=now,
            request_signature=b"",
        )
        report = dataclasses.replace(
            report, request_signature=self.vault.sign_request(signed_payload(report))
        )
        try:
            self.transport.report_metering(encode(report))
        except DrmError as e:
            log_event(
                logger, logging.WARNING, "metering_failed", metering_event=event, code=e.code
            )

    # ------------------------------------------------------------------
    # playback
    # ------------------------------------------------------------------

    def play(
        self,
        session: PlaybackSession,
        sink: DisplaySink,
        segments: Optional[Iterable[int]] = None,
        now: Optional[int] = None,
    ) -> int:
        """Decrypt segments into ``sink``; returns the number of bytes delivered.

        Segment ``i`` of the call plays at ``now + i * segment_seconds``.
        RENTAL and PERSISTENT licenses are checked once at start: a license
        expiring during the call lets it finish and leaves the session in
        EXPIRED_PENDING. LEASE licenses are renewed when due and playback
        stops at the first segment boundary the lease cannot cover.

        Parameters
        ----------
        session : PlaybackSession
            Licensed session
        sink : DisplaySink
            Vault sink receiving the plaintext
        segments : iterable of int, optional
            Segment indices to play (default: all)
        now : int, optional
            Start time (default: the CDM clock)

        Raises
        ------
        DrmError
            ``PLAYBACK_DENIED`` without a live license, ``LEASE_LOST`` when a
            lease ends mid-playback, ``MALFORMED`` for a segment that does not
            match its manifest digest
        """
        now = self._now(now)
        if session.state is not SessionState.LICENSED or session.receipt is None:
            raise DrmError(
                ErrorCode.PLAYBACK_DENIED, f"session is {session.state.value}, not licensed"
            )
        if session.fetch is None:
            raise DrmError(ErrorCode.CONFIG, "session has no segment source")
        manifest = session.manifest
        indices = list(range(len(manifest.segments)) if segments is None else segments)
        records: List[SegmentRecord] = []
        for index in indices:
            if not 0 <= index < len(manifest.segments):
                raise ValueError(f"segment index {index} out of range")
            records.append(manifest.segments[index])

        mode = session.receipt.policy.mode
        if mode is LicenseMode.LEASE:
            self._ensure_lease(session, now)
        elif session.receipt.policy.expired(now):
            raise DrmError(ErrorCode.PLAYBACK_DENIED, "license has expired")

        needed: List[KeyId] = list(dict.fromkeys(r.key_id for r in records))
        try:
            grant = self.vault.open_playback(needed, now)
        except DrmError as e:
            raise DrmError(ErrorCode.PLAYBACK_DENIED, e.message) from e

        session.transition(SessionState.PLAYING)
        self._report(session, MeteringEvent.PLAYBACK_START, now)
        delivered = 0
        try:
            for position, record in enumerate(records):
                at = now + position * self.segment_seconds
                if mode is LicenseMode.LEASE:
                    self._ensure_lease(session, at)
                blob = session.fetch(record)
                verify_segment_digest(record, blob, self.suite)
                try:
                    delivered += self.vault.decrypt_segment_to_sink(
                        blob, record, session.content_id, manifest.scheme, sink, at, grant
                    )
                except DrmError as e:
                    if mode is LicenseMode.LEASE and e.code is ErrorCode.KEY_EXPIRED:
                        raise DrmError(ErrorCode.LEASE_LOST, "lease expired mid-playback") from e
                    raise
        except Exception as e:
            lost = isinstance(e, DrmError) and e.code is ErrorCode.LEASE_LOST
            session.transition(SessionState.STOPPED if lost else SessionState.LICENSED)
            raise
        finally:
            self.vault.close_playback(grant)

        end = now + len(records) * self.segment_seconds
        self._report(session, MeteringEvent.PLAYBACK_STOP, end)
        if mode is not LicenseMode.LEASE and end > session.receipt.policy.expiry:
            session.transition(SessionState.EXPIRED_PENDING)
        else:
            session.transition(SessionState.LICENSED)
        log_event(
            logger,
            logging.INFO,
            "playback_finished",
            content_id=session.content_id,
            segments=len(records),
            delivered=delivered,
            state=session.state.value,
        )
        return delivered

    def _ensure_lease(self, session: PlaybackSession, at: int) -> None:
        """Renew when due; raise LEASE_LOST if renewal fails or the lease ran out.

        Only called at segment boundaries. Inside a playback the caller moves
        the session to STOPPED; before it, this method does.
        """
        assert session.receipt is not None
        expiry = session.receipt.expiry
        if at < expiry - self.lease_renew_margin:
            return
        try:
            if self.transport is not None:
                self.renew_lease(session, at)
                return
            if at >= expiry:
                raise DrmError(ErrorCode.LEASE_LOST, "lease slot expired")
        except DrmError:
            if session.state is SessionState.LICENSED:
                session.transition(SessionState.STOPPED)
            raise

    def stop(self, session: PlaybackSession, now: Optional[int] = None) -> None:
        """End the session: release any lease and drop non-persistent keys."""
        if session.state is SessionState.STOPPED:
            return
        now = self._now(now)
        self._abandon_request(session)
        if session.receipt is not None:
            if session.receipt.policy.mode is LicenseMode.LEASE:
                self._release_lease(session, now)
            if not session.receipt.policy.persistent:
                self.vault.discard_license(session.secure_content_id)
        session.transition(SessionState.STOPPED)

    # ------------------------------------------------------------------
    # offline playback
    # ------------------------------------------------------------------

    def _require_store(self) -> OfflineStore:
        if self.offline_store is None:
            raise DrmError(ErrorCode.CONFIG, "no offline store configured")
        return self.offline_store

    def store_offline(self, session: PlaybackSession) -> None:
        """Seal the session's license to this device and store it.

        Raises
        ------
        DrmError
            ``NOT_PERSISTENT`` if the license may not be stored
        """
        if session.receipt is None:
            raise DrmError(ErrorCode.NOT_PERSISTENT, "session holds no license")
        if not session.receipt.policy.persistent:
            raise DrmError(ErrorCode.NOT_PERSISTENT, "license may not be stored offline")
        store = self._require_store()
        record = self.vault.export_persistent(session.secure_content_id, session.content_id)
        store.set(session.content_id, record)
        log_event(logger, logging.INFO, "license_stored", content_id=session.content_id)

    def resume_offline(
        self,
        manifest: SignedManifest,
        fetch: Optional[SegmentFetcher] = None,
        now: Optional[int] = None,
    ) -> PlaybackSession:
        """Reinstall the stored license of a content and return a LICENSED session.

        Raises
        ------
        DrmError
            ``KEY_MISSING`` if nothing is stored, ``DEVICE_MISMATCH`` if the
            record was sealed by another device, ``EXPIRED`` if the license
            has expired
        """
        now = self._now(now)
        content_id = manifest.content_id
        record = self._require_store().get(content_id)
        if record is None:
            raise DrmError(ErrorCode.KEY_MISSING, f"no offline license for {content_id}")
        receipt = self.vault.import_persistent(record, now)
        session = self.open_session(manifest, fetch)
        session.receipt = receipt
        session.transition(SessionState.LICENSED)
        log_event(logger, logging.INFO, "license_resumed", content_id=content_id)
        return session
