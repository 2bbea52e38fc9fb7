"""Tests for the license server pipeline and its HTTP surface."""

import pytest
from fastapi.testclient import TestClient

from minidrm.conformance.deployment import ACCOUNT, AUTH_TOKEN
from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.keys import generate_key_seed, generate_root, generate_server
from minidrm.core.messages import ErrorEnvelope, LeaseAction
from minidrm.core.types import SecurityLevel, ServerCertificate
from minidrm.core.wire import decode, encode
from minidrm.packager.package import PackageConfig, package
from minidrm.server.app import create_app
from minidrm.server.policy import ContentPolicy
from minidrm.server.service import LicenseServer, TokenAuthenticator


def _spc(dep, device, content, token=AUTH_TOKEN, now=None):
    session = dep.open_session(device, content)
    return session, encode(device.cdm.create_license_request(session, token, now))


def _code(call):
    with pytest.raises(DrmError) as info:
        call()
    return info.value.code


class TestTokenAuthenticator:
    def test_known_and_unknown(self):
        auth = TokenAuthenticator({"tok": "alice"})
        auth.register("tok2", "bob")
        assert auth.authenticate("tok") == "alice"
        assert auth.authenticate("tok2") == "bob"
        assert _code(lambda: auth.authenticate("nope")) is ErrorCode.AUTH_FAILED


class TestLicenseIssuance:
    """Happy path and each rejection stage of the request pipeline."""

    def test_issue_and_install(self, dep):
        device = dep.new_client()
        session, spc = _spc(dep, device, dep.rental)
        ckc = dep.server.handle_license_request(spc)
        device.cdm.process_license_response(ckc, session)
        assert session.state.value == "licensed"
        assert set(session.receipt.key_ids) == set(dep.rental.loaded.manifest.key_ids)
        assert session.expiry == dep.clock.now() + dep.settings.rental_duration

    def test_replayed_request(self, dep):
        device = dep.new_client()
        _, spc = _spc(dep, device, dep.rental)
        dep.server.handle_license_request(spc)
        assert _code(lambda: dep.server.handle_license_request(spc)) is ErrorCode.REPLAY

    def test_client_time_outside_window(self, dep):
        device = dep.new_client()
        _, spc = _spc(dep, device, dep.rental, now=dep.clock.now() + 10_000)
        assert _code(lambda: dep.server.handle_license_request(spc)) is ErrorCode.REPLAY

    def test_unknown_token(self, dep):
        device = dep.new_client()
        _, spc = _spc(dep, device, dep.rental, token="stolen")
        assert _code(lambda: dep.server.handle_license_request(spc)) is ErrorCode.AUTH_FAILED

    def test_foreign_root_certificate(self, dep):
        device = dep.new_client(root=generate_root(dep.suite))
        _, spc = _spc(dep, device, dep.rental)
        assert _code(lambda: dep.server.handle_license_request(spc)) is ErrorCode.BAD_CERT

    def test_bad_request_signature(self, dep):
        device = dep.new_client()
        _, spc = _spc(dep, device, dep.rental)
        tampered = spc[:-1] + bytes([spc[-1] ^ 0x01])
        code = _code(lambda: dep.server.handle_license_request(tampered))
        assert code is ErrorCode.BAD_SIGNATURE

    def test_garbage(self, dep):
        code = _code(lambda: dep.server.handle_license_request(b"not a request"))
        assert code is ErrorCode.MALFORMED

    def test_level_too_low(self, dep):
        device = dep.new_client(level=SecurityLevel.DEV)
        _, spc = _spc(dep, device, dep.rental)
        assert _code(lambda: dep.server.handle_license_request(spc)) is ErrorCode.LEVEL_TOO_LOW

    def test_version_rollback(self, dep):
        device = dep.new_client(supported_versions=[1])
        _, spc = _spc(dep, device, dep.rental)
        code = _code(lambda: dep.server.handle_license_request(spc))
        assert code is ErrorCode.VERSION_ROLLBACK

    @pytest.mark.parametrize(
        "kwargs, expected",
        [
            (dict(supported_versions=[1]), ErrorCode.VERSION_ROLLBACK),
            (dict(level=SecurityLevel.DEV), ErrorCode.LEVEL_TOO_LOW),
        ],
    )
    def test_rejected_request_fails_the_same_way_twice(self, dep, kwargs, expected):
        device = dep.new_client(**kwargs)
        _, spc = _spc(dep, device, dep.rental)
        assert _code(lambda: dep.server.handle_license_request(spc)) is expected
        assert _code(lambda: dep.server.handle_license_request(spc)) is expected
        assert len(dep.server.ledger) == 0

    def test_negotiates_highest_common_version(self, dep):
        device = dep.new_client(supported_versions=[1, 2])
        session = dep.licensed_session(device, dep.rental)
        assert session.receipt.protocol_version == 2

    def test_unknown_content(self, dep):
        assert _code(lambda: dep.server.key_ids_for("missing")) is ErrorCode.UNKNOWN_KEYID

    def test_empty_content_is_licensable(self, dep):
        config = PackageConfig("empty", 1024, 2, generate_key_seed(dep.suite))
        out = package(b"", config, dep.suite, dep.publisher.sign_private, dep.transport_key)
        dep.server.add_content(out.registry, ContentPolicy())
        device = dep.new_client()
        manifest = device.cdm.load_manifest(out.manifest_bytes)
        session = device.cdm.open_session(manifest, lambda record: b"")
        device.cdm.acquire_license(session, AUTH_TOKEN)
        assert session.receipt.key_ids == manifest.key_ids
        sink = device.vault.create_sink()
        assert device.cdm.play(session, sink) == 0
        assert sink.digest == dep.suite.hash.digest(b"")

    def test_registered_content(self, dep):
        assert dep.server.registered_content() == (
            "conformance-lease",
            "conformance-offline",
            "conformance-rental",
        )
        assert set(dep.server.key_ids_for("conformance-rental")) == set(
            dep.rental.loaded.manifest.key_ids
        )

    def test_rejections_are_logged_without_keys(self, dep):
        device = dep.new_client()
        _, spc = _spc(dep, device, dep.rental, token="stolen")
        with pytest.raises(DrmError):
            dep.server.handle_license_request(spc)
        assert any("license_rejected" in line for line in dep.logs.lines)
        for canary in dep.key_canaries:
            assert all(canary.hex() not in line for line in dep.logs.lines)

    def test_server_requires_certificate(self, dep):
        with pytest.raises(DrmError) as info:
            LicenseServer(dep.root, dep.suite, dep.root.sign_public)
        assert info.value.code is ErrorCode.CONFIG

    def test_rate_limited(self, dep):
        server = LicenseServer(
            dep.server_identity,
            dep.suite,
            dep.root.sign_public,
            clock=dep.clock,
            auth={AUTH_TOKEN: ACCOUNT},
            rate_limit=1,
        )
        device = dep.new_client()
        _, first = _spc(dep, device, dep.rental)
        _, second = _spc(dep, device, dep.rental)
        with pytest.raises(DrmError):
            server.handle_license_request(first)
        assert _code(lambda: server.handle_license_request(second)) is ErrorCode.RATE_LIMITED


class TestLeases:
    """Concurrent-stream limits through the full protocol."""

    def test_capacity(self, dep):
        for _ in range(dep.settings.lease_capacity):
            dep.licensed_session(dep.new_client(), dep.lease)
        extra = dep.new_client()
        code = _code(lambda: dep.licensed_session(extra, dep.lease))
        assert code is ErrorCode.LEASE_EXHAUSTED

    def test_release_frees_slot(self, dep):
        devices = [dep.new_client() for _ in range(dep.settings.lease_capacity)]
        sessions = [dep.licensed_session(d, dep.lease) for d in devices]
        devices[0].cdm.stop(sessions[0])
        dep.licensed_session(dep.new_client(), dep.lease)

    def test_renewal(self, dep):
        device = dep.new_client()
        session = dep.licensed_session(device, dep.lease)
        later = dep.clock.now() + 50
        expiry = device.cdm.renew_lease(session, now=later)
        assert expiry == later + dep.settings.lease_duration
        assert session.expiry == expiry
        counts = dep.server.metering_counts(ACCOUNT)["conformance-lease"]
        assert counts["LEASE_RENEWED"] == 1

    def test_renewal_after_expiry_loses_lease(self, dep):
        device = dep.new_client()
        session = dep.licensed_session(device, dep.lease)
        late = dep.clock.now() + dep.settings.lease_duration + 1
        assert _code(lambda: device.cdm.renew_lease(session, now=late)) is ErrorCode.LEASE_LOST

    @pytest.mark.parametrize(
        "skew, expected",
        [
            (0, ErrorCode.LEASE_EXHAUSTED),
            (500, ErrorCode.LEASE_EXHAUSTED),
            (5_000, ErrorCode.REPLAY),
        ],
    )
    def test_client_time_cannot_free_other_slots(self, dep, skew, expected):
        capacity = dep.settings.lease_capacity
        for _ in range(capacity):
            dep.licensed_session(dep.new_client(), dep.lease)
        _, spc = _spc(dep, dep.new_client(), dep.lease, now=dep.clock.now() + skew)
        assert _code(lambda: dep.server.handle_license_request(spc)) is expected
        active = dep.server.leases.active(ACCOUNT, "conformance-lease", dep.clock.now())
        assert len(active) == capacity

    def test_exhausted_request_succeeds_once_a_slot_frees(self, dep):
        devices = [dep.new_client() for _ in range(dep.settings.lease_capacity)]
        sessions = [dep.licensed_session(d, dep.lease) for d in devices]
        _, spc = _spc(dep, dep.new_client(), dep.lease)
        code = _code(lambda: dep.server.handle_license_request(spc))
        assert code is ErrorCode.LEASE_EXHAUSTED
        devices[0].cdm.stop(sessions[0])
        dep.server.handle_license_request(spc)
        assert _code(lambda: dep.server.handle_license_request(spc)) is ErrorCode.REPLAY

    def test_renewal_time_moves_only_own_slot(self, dep):
        devices = [dep.new_client() for _ in range(dep.settings.lease_capacity)]
        sessions = [dep.licensed_session(d, dep.lease) for d in devices]
        later = dep.clock.now() + dep.settings.lease_duration - 1
        assert devices[0].cdm.renew_lease(sessions[0], now=later) == (
            later + dep.settings.lease_duration
        )
        active = dep.server.leases.active(ACCOUNT, "conformance-lease", dep.clock.now())
        assert len(active) == len(devices)
        server_expiry = dep.clock.now() + dep.settings.lease_duration
        assert all(slot.expiry == server_expiry for slot in active.values())


class TestMetering:
    def test_playback_events_counted(self, dep):
        device = dep.new_client()
        session = dep.licensed_session(device, dep.rental)
        device.cdm.play(session, device.vault.create_sink())
        counts = dep.server.metering_counts(ACCOUNT)["conformance-rental"]
        assert counts == {"LICENSE_ISSUED": 1, "PLAYBACK_START": 1, "PLAYBACK_STOP": 1}
        summary = dep.server.metering.summary()
        assert summary.loc[(ACCOUNT, "conformance-rental"), "PLAYBACK_START"] == 1


class TestHttpApp:
    """FastAPI routes over the same server."""

    @pytest.fixture
    def client(self, dep):
        return TestClient(create_app(dep.server))

    def test_healthz(self, client):
        response = client.get("/healthz")
        assert response.status_code == 200
        assert response.json() == {"status": "ok", "content": 3}

    def test_certificate(self, dep, client):
        response = client.get("/v1/certificate")
        assert response.status_code == 200
        assert decode(response.content, ServerCertificate) == dep.server.certificate

    def test_license_round_trip(self, dep, client):
        device = dep.new_client()
        session, spc = _spc(dep, device, dep.rental)
        response = client.post("/v1/license", content=spc)
        assert response.status_code == 200
        assert response.headers["content-type"] == "application/octet-stream"
        device.cdm.process_license_response(response.content, session)
        assert session.receipt is not None

    def test_error_envelope(self, client):
        response = client.post("/v1/license", content=b"junk")
        assert response.status_code == 400
        envelope = decode(response.content, ErrorEnvelope)
        assert envelope.code == int(ErrorCode.MALFORMED)

    def test_replay_status(self, dep, client):
        device = dep.new_client()
        _, spc = _spc(dep, device, dep.rental)
        assert client.post("/v1/license", content=spc).status_code == 200
        response = client.post("/v1/license", content=spc)
        assert response.status_code == 409
        assert decode(response.content, ErrorEnvelope).code == int(ErrorCode.REPLAY)

    def test_auth_status(self, dep, client):
        device = dep.new_client()
        _, spc = _spc(dep, device, dep.rental, token="stolen")
        assert client.post("/v1/license", content=spc).status_code == 401

    def test_lease_routes_match_action(self, dep, client):
        device = dep.new_client()
        session = dep.licensed_session(device, dep.lease)
        release = device.cdm._lease_request(session, LeaseAction.RELEASE, dep.clock.now())
        response = client.post("/v1/lease/renew", content=release)
        assert response.status_code == 400
        assert decode(response.content, ErrorEnvelope).code == int(ErrorCode.MALFORMED)
        assert len(dep.server.leases.active(ACCOUNT, "conformance-lease", dep.clock.now())) == 1
        assert client.post("/v1/lease/release", content=release).status_code == 200
        assert dep.server.leases.active(ACCOUNT, "conformance-lease", dep.clock.now()) == {}

    def test_metering_counts(self, client):
        response = client.get("/v1/metering/nobody")
        assert response.json() == {"account": "nobody", "counts": {}}

    def test_rogue_server_certificate_refused_by_client(self, dep):
        rogue = generate_server(dep.suite, generate_root(dep.suite), dep.clock.now() + 100)
        device = dep.new_client(server_identity=rogue)
        session = dep.open_session(device, dep.rental)
        code = _code(lambda: device.cdm.create_license_request(session, AUTH_TOKEN))
        assert code is ErrorCode.SERVER_CERT_INVALID
