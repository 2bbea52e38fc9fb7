"""Tests for key derivation, certificates and key files."""

import dataclasses
import hashlib
import logging
import os
import stat

import pytest

from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.keys import (
    KeyPair,
    KeyRole,
    certify_client,
    derive_content_key,
    device_id_for,
    generate_client,
    generate_domain,
    generate_key_seed,
    generate_publisher,
    generate_root,
    generate_server,
    generate_transport,
    generate_vault,
    open_signed,
    public_part,
    random_key_id,
    read_keypair,
    secure_content_id,
    sign_detached,
    sign_message,
    verify_attestation,
    verify_client_certificate,
    verify_detached,
    verify_server_certificate,
    write_keypair,
)
from minidrm.core.messages import LeaseReleased
from minidrm.core.types import KeyId, KeySeed, SecurityLevel
from minidrm.core.wire import encode
from minidrm.tee.vault import TeeVault

NOW = 1_000_000


class TestContentKeyDerivation:
    """``key = HASH(seed ‖ key_id ‖ label)[:16]``."""

    def test_matches_reference(self, suite):
        seed = KeySeed(bytes(range(30)))
        kid = KeyId(b"\x11" * 16)
        expected = hashlib.sha256(bytes(range(30)) + b"\x11" * 16 + b"minidrm/ck/v1").digest()
        assert derive_content_key(seed, kid, suite).key == expected[:16]

    def test_deterministic(self, suite):
        seed = generate_key_seed(suite)
        kid = random_key_id(suite)
        assert derive_content_key(seed, kid, suite) == derive_content_key(seed, kid, suite)

    def test_distinct_key_ids_give_distinct_keys(self, suite):
        seed = generate_key_seed(suite)
        keys = {derive_content_key(seed, random_key_id(suite), suite).key for _ in range(100)}
        assert len(keys) == 100

    def test_period_carried(self, suite):
        key = derive_content_key(generate_key_seed(suite), random_key_id(suite), suite, period=3)
        assert key.period == 3

    def test_short_seed(self, suite):
        with pytest.raises(DrmError) as info:
            derive_content_key(b"\x00" * 16, random_key_id(suite), suite)
        assert info.value.code is ErrorCode.SEED_LENGTH


class TestIdentifiers:
    """Derived identifiers."""

    def test_device_id_is_hash_of_key(self, suite):
        assert device_id_for(b"pk", suite) == hashlib.sha256(b"pk").digest()

    def test_secure_content_id(self, suite):
        assert secure_content_id("movie", suite) == hashlib.sha256(b"movie").digest()
        assert secure_content_id("movie", suite) != secure_content_id("movie2", suite)


class TestCertificates:
    """Root-issued server and client certificates."""

    @pytest.fixture
    def root(self, any_suite):
        return generate_root(any_suite)

    def test_client_certificate_verifies(self, any_suite, root):
        client = generate_client(any_suite, root, SecurityLevel.HARDWARE)
        cert = client.client_certificate
        assert cert.security_level is SecurityLevel.HARDWARE
        assert verify_client_certificate(cert, root.sign_public, any_suite)

    def test_certify_client_logs_level(self, any_suite, root, caplog):
        vault_identity = generate_vault(any_suite)
        with caplog.at_level(logging.INFO, logger="minidrm.core.keys"):
            client = certify_client(vault_identity, root, any_suite, SecurityLevel.HARDWARE)
            generate_client(any_suite, root)
        assert client.role == KeyRole.CLIENT.value
        assert client.sign_public == vault_identity.sign_public
        assert caplog.text.count("client_certified") == 2
        assert "security_level=HARDWARE" in caplog.text

    def test_client_certificate_wrong_root(self, any_suite, root):
        cert = generate_client(any_suite, root).client_certificate
        other = generate_root(any_suite)
        assert not verify_client_certificate(cert, other.sign_public, any_suite)

    def test_client_certificate_tampered_level(self, any_suite, root):
        cert = generate_client(any_suite, root, SecurityLevel.DEV).client_certificate
        forged = dataclasses.replace(cert, security_level=SecurityLevel.HARDWARE)
        assert not verify_client_certificate(forged, root.sign_public, any_suite)

    def test_client_certificate_device_id_mismatch(self, any_suite, root):
        cert = generate_client(any_suite, root).client_certificate
        forged = sign_message(
            dataclasses.replace(cert, device_id=b"\x00" * 32), root.sign_private, any_suite
        )
        assert not verify_client_certificate(forged, root.sign_public, any_suite)

    def test_domain_membership(self, any_suite, root):
        domain = generate_domain(any_suite)
        client = generate_client(any_suite, root, domain=domain)
        assert client.client_certificate.domain_id == domain.domain_id
        assert client.domain_kem_private == domain.kem_private
        assert verify_client_certificate(client.client_certificate, root.sign_public, any_suite)

    def test_server_certificate_expiry(self, any_suite, root):
        server = generate_server(any_suite, root, NOW + 100)
        cert = server.server_certificate
        assert verify_server_certificate(cert, root.sign_public, any_suite, NOW)
        assert verify_server_certificate(cert, root.sign_public, any_suite, NOW + 99)
        assert not verify_server_certificate(cert, root.sign_public, any_suite, NOW + 100)

    def test_server_certificate_wrong_suite(self, suite):
        root = generate_root(suite)
        cert = generate_server(suite, root, NOW + 100).server_certificate
        forged = sign_message(
            dataclasses.replace(cert, suite="p256-ecdsa"), root.sign_private, suite
        )
        assert not verify_server_certificate(forged, root.sign_public, suite, NOW)

    def test_root_required(self, suite):
        for make in (
            lambda: generate_client(suite, None),
            lambda: generate_server(suite, None, NOW + 100),
        ):
            with pytest.raises(DrmError) as info:
                make()
            assert info.value.code is ErrorCode.ROOT_MISSING

    def test_distinct_identities(self, suite):
        root = generate_root(suite)
        keys = {generate_client(suite, root).sign_public for _ in range(20)}
        assert len(keys) == 20


class TestSignedMessages:
    """Verify-before-parse helpers."""

    def test_detached_signature(self, any_suite):
        publisher = generate_publisher(any_suite)
        other = generate_publisher(any_suite)
        signature = sign_detached(b"payload", publisher.sign_private, any_suite)
        assert verify_detached(b"payload", signature, publisher.sign_public, any_suite)
        assert not verify_detached(b"payloae", signature, publisher.sign_public, any_suite)
        assert not verify_detached(b"payload", signature, other.sign_public, any_suite)
        assert not verify_detached(b"payload", b"", publisher.sign_public, any_suite)

    def test_open_signed(self, suite):
        publisher = generate_publisher(suite)
        message = sign_message(
            LeaseReleased(secure_content_id=b"c", slot_token=b"t", server_signature=b""),
            publisher.sign_private,
            suite,
        )
        assert open_signed(encode(message), LeaseReleased, publisher.sign_public, suite) == message

    def test_open_signed_rejects_flip(self, suite):
        publisher = generate_publisher(suite)
        message = sign_message(
            LeaseReleased(secure_content_id=b"c", slot_token=b"t", server_signature=b""),
            publisher.sign_private,
            suite,
        )
        data = bytearray(encode(message))
        data[14] ^= 0x01
        with pytest.raises(DrmError) as info:
            open_signed(bytes(data), LeaseReleased, publisher.sign_public, suite)
        assert info.value.code is ErrorCode.BAD_SIGNATURE

    def test_attestation(self, suite):
        identity = generate_client(suite, generate_root(suite))
        vault = TeeVault(identity, suite)
        identity_key = identity.sign_public
        report = vault.attest(b"n" * 16)
        assert verify_attestation(report, b"n" * 16, identity_key, suite) == report
        with pytest.raises(DrmError) as info:
            verify_attestation(report, b"m" * 16, identity_key, suite)
        assert info.value.code is ErrorCode.REPLAY

    def test_attestation_with_raised_level(self, suite):
        identity = generate_client(suite, generate_root(suite))
        report = TeeVault(identity, suite).attest(b"n" * 16)
        forged = dataclasses.replace(report, security_level=SecurityLevel.HARDWARE)
        with pytest.raises(DrmError) as info:
            verify_attestation(forged, b"n" * 16, identity.sign_public, suite)
        assert info.value.code is ErrorCode.BAD_SIGNATURE


class TestKeyFiles:
    """KEYPAIR files on disk."""

    def test_round_trip_and_mode(self, suite, tmp_path):
        keypair = generate_vault(suite)
        path = write_keypair(tmp_path / "keys" / "vault.key", keypair)
        assert read_keypair(path, KeyRole.VAULT) == keypair
        if os.name == "posix":
            assert stat.S_IMODE(path.stat().st_mode) == 0o600

    def test_role_mismatch(self, suite, tmp_path):
        path = write_keypair(tmp_path / "t.key", generate_transport(suite))
        with pytest.raises(DrmError) as info:
            read_keypair(path, KeyRole.ROOT)
        assert info.value.code is ErrorCode.CONFIG

    def test_missing_file(self, tmp_path):
        with pytest.raises(DrmError) as info:
            read_keypair(tmp_path / "absent.key")
        assert info.value.code is ErrorCode.IO

    def test_not_a_keypair(self, tmp_path):
        path = tmp_path / "junk.key"
        path.write_bytes(b"not a key file")
        with pytest.raises(DrmError) as info:
            read_keypair(path)
        assert info.value.code is ErrorCode.MALFORMED

    def test_public_part_drops_secrets(self, suite):
        server = generate_server(suite, generate_root(suite), NOW + 100)
        public = public_part(server)
        assert public.sign_private is None and public.kem_private is None
        assert public.sign_public == server.sign_public
        assert public.server_certificate == server.server_certificate

    def test_secrets_not_in_repr(self, suite):
        keypair = generate_transport(suite)
        assert keypair.symmetric_key.hex() not in repr(keypair)
        assert repr(keypair.symmetric_key) not in repr(keypair)

    def test_unknown_role(self, suite):
        with pytest.raises(ValueError, match="Unknown key role"):
            KeyPair(role="admin", suite=suite.name)

    def test_require(self, suite):
        with pytest.raises(DrmError) as info:
            generate_root(suite).require("kem_private")
        assert info.value.code is ErrorCode.CONFIG
